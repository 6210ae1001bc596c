"""Shared numerical helpers: stable softmax and Shannon entropy."""
import numpy as np


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max subtraction so large logit scales cannot overflow."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def shannon_entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Natural-log entropy with the 0*log(0) = 0 convention."""
    q = np.clip(p, 1e-300, None)
    return -np.sum(p * np.log(q), axis=axis)
