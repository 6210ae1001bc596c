"""Exception hierarchy with process exit codes for the CLI.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O or
format error. Library callers catch the classes; the CLI maps them to codes.
"""


class StsError(Exception):
    exit_code = 1


class ValidationError(StsError):
    """Bad inputs: shapes, ranges, manifests, degenerate data."""

    exit_code = 2


class DegenerateSpectrumError(ValidationError):
    """All singular values are zero; no subspace can be selected."""


class DegenerateEmbeddingError(ValidationError):
    """A text embedding row has zero norm and cannot be normalized."""


class NumericalError(StsError):
    """Non-finite values or a failed numerical routine."""

    exit_code = 3


class AnnihilatedPrototypeError(NumericalError):
    """The steering shift cancelled a prototype almost exactly.

    Renormalizing a near-zero vector has an exploding gradient, so this is
    a hard error instead of a silent renormalization.
    """

    def __init__(self, class_index, norm):
        self.class_index = int(class_index)
        self.norm = float(norm)
        super().__init__(
            f"shift annihilates prototype of class {class_index} "
            f"(norm {norm:.3e} < 1e-8)"
        )


class StorageError(StsError):
    """File-level problems: format violations, truncation, bad payloads."""

    exit_code = 4


class FormatError(StorageError):
    """Header does not match the bundle format."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CorruptPayloadError(StorageError):
    """Payload shorter or longer than the header promises."""


class InvalidDataError(StorageError):
    """Payload decodes but contains non-finite values."""
