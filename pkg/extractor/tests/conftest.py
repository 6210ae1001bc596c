import numpy as np
import pytest
from PIL import Image

CLASSES = ("heron", "kestrel")


def noise_image(seed, w=48, h=40):
    rng = np.random.default_rng(seed)
    return Image.fromarray(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


@pytest.fixture
def image_root(tmp_path):
    """Two classes, three good images each, plus files that must be
    skipped or ignored: a corrupt png, an all-black image (degenerate
    stub embedding), and a stray text file."""
    root = tmp_path / "images"
    for ci, name in enumerate(CLASSES):
        d = root / name
        d.mkdir(parents=True)
        for j in range(3):
            noise_image(100 * ci + j).save(d / f"img{j}.png")
    (root / "kestrel" / "broken.png").write_bytes(b"not an image at all")
    black = Image.fromarray(np.zeros((40, 48, 3), dtype=np.uint8))
    black.save(root / "heron" / "black.png")
    (root / "heron" / "notes.txt").write_text("ignore me")
    return root
