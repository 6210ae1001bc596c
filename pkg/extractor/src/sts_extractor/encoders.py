"""Embedding backends.

An encoder is anything with this shape:

    encode_images(images: list[PIL.Image]) -> (N, D) float array
    encode_texts(texts: list[str]) -> (T, D) float array
    input_size: int        side length the image pipeline should produce
    logit_scale: float     the checkpoint's learned softmax temperature
    model_name: str
    checkpoint_hash: str   short provenance fingerprint

``StubEncoder`` is a deterministic stand-in used by the tests: a fixed
random projection of downsampled pixels, and text vectors derived from a
hash of the string. ``ClipEncoder`` wraps a CLIP checkpoint through
``transformers`` and is only importable when torch is installed.
"""
from __future__ import annotations

import hashlib

import numpy as np


class StubEncoder:
    """Fast deterministic encoder with no model dependencies."""

    def __init__(self, dim: int = 64, input_size: int = 32):
        self.dim = dim
        self.input_size = input_size
        self.logit_scale = 100.0
        self.model_name = "stub-linear"
        self.checkpoint_hash = hashlib.sha256(
            f"stub-linear-{dim}-{input_size}".encode()).hexdigest()[:16]
        self._proj = np.random.default_rng(12345).standard_normal((192, dim))

    def encode_images(self, images) -> np.ndarray:
        from PIL import Image
        rows = []
        for img in images:
            small = img.resize((8, 8), Image.Resampling.BILINEAR)
            px = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
            rows.append(np.tanh(px @ self._proj))
        return np.stack(rows)

    def encode_texts(self, texts) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode()).digest()
            seed = int.from_bytes(digest[:8], "little")
            rows.append(np.random.default_rng(seed).standard_normal(self.dim))
        return np.stack(rows)


class ClipEncoder:
    """CLIP image/text towers via transformers, inference only."""

    def __init__(self, checkpoint: str = "openai/clip-vit-base-patch16",
                 device: str = "cpu", batch_size: int = 32):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(checkpoint).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(checkpoint)
        self.device = device
        self.batch_size = batch_size
        self.model_name = checkpoint
        self.logit_scale = float(self.model.logit_scale.exp().item())
        crop = self.processor.image_processor.crop_size
        self.input_size = crop["height"] if isinstance(crop, dict) else int(crop)
        self.checkpoint_hash = self._fingerprint()

    def _fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.model.named_parameters()):
            h.update(f"{name}:{tuple(p.shape)};".encode())
        h.update(f"logit_scale={self.logit_scale!r}".encode())
        return h.hexdigest()[:16]

    def _batched(self, items, encode):
        outs = []
        for i in range(0, len(items), self.batch_size):
            outs.append(encode(items[i:i + self.batch_size]))
        return np.concatenate(outs)

    def encode_images(self, images) -> np.ndarray:
        def encode(batch):
            inputs = self.processor(images=batch, return_tensors="pt")
            inputs = {k: v.to(self.device) for k, v in inputs.items()}
            with self._torch.no_grad():
                feats = self.model.get_image_features(**inputs)
            return feats.cpu().double().numpy()

        return self._batched(list(images), encode)

    def encode_texts(self, texts) -> np.ndarray:
        def encode(batch):
            inputs = self.processor(text=list(batch), return_tensors="pt",
                                    padding=True)
            inputs = {k: v.to(self.device) for k, v in inputs.items()}
            with self._torch.no_grad():
                feats = self.model.get_text_features(**inputs)
            return feats.cpu().double().numpy()

        return self._batched(list(texts), encode)
