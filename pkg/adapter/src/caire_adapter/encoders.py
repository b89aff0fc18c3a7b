"""Vision-language encoders pluggable into the extraction pipeline.

Two implementations ship here. HashEncoder derives unit vectors from content
digests: no model weights, fully deterministic, ideal for pipeline tests and
offline smoke runs. SiglipEncoder wraps a multilingual SigLIP checkpoint via
transformers for real extractions; it is loaded lazily so the models extra is
only needed when actually used. Both produce L2-normalized float32 rows.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

DEFAULT_ENCODER_MODEL = "google/siglip-so400m-patch16-256-i18n"


class Encoder(Protocol):
    identifier: str
    dimension: int

    def embed_image_files(self, paths: Sequence[Path]) -> np.ndarray: ...

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def _normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1, keepdims=True)
    return (matrix / norms.astype(np.float32)).astype(np.float32)


class HashEncoder:
    """Content-addressed pseudo-embeddings: same bytes, same vector, forever."""

    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = int(dimension)
        self.seed = int(seed)
        self.identifier = f"hash-encoder/{self.dimension}/{self.seed}"

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(str(self.seed).encode() + b"\x00" + payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dimension).astype(np.float32)
        return vec

    def embed_image_files(self, paths: Sequence[Path]) -> np.ndarray:
        if not paths:
            return np.zeros((0, self.dimension), dtype=np.float32)
        rows = [self._vector(b"image\x00" + Path(p).read_bytes()) for p in paths]
        return _normalize(np.stack(rows))

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension), dtype=np.float32)
        rows = [self._vector(b"text\x00" + t.encode("utf-8")) for t in texts]
        return _normalize(np.stack(rows))


class SiglipEncoder:
    """Real multilingual image/text encoder behind the same interface.

    Weights load on first use; inference runs in no-grad eval mode so repeated
    extractions of the same inputs produce identical vectors.
    """

    def __init__(self, model_id: str = DEFAULT_ENCODER_MODEL, device: str = "cpu"):
        self.identifier = f"hf:{model_id}"
        self.model_id = model_id
        self.device = device
        self._model = None
        self._processor = None
        self.dimension = -1  # known after load

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoProcessor
        except ImportError as exc:
            raise RuntimeError(
                "SiglipEncoder needs the [models] extra (torch, transformers)"
            ) from exc
        self._processor = AutoProcessor.from_pretrained(self.model_id)
        self._model = AutoModel.from_pretrained(self.model_id).to(self.device).eval()
        self.dimension = int(self._model.config.projection_dim)

    def embed_image_files(self, paths: Sequence[Path]) -> np.ndarray:
        self._load()
        import torch
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        if not images:
            return np.zeros((0, self.dimension), dtype=np.float32)
        inputs = self._processor(images=images, return_tensors="pt").to(self.device)
        with torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return _normalize(features.cpu().numpy().astype(np.float32))

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        self._load()
        import torch

        if not texts:
            return np.zeros((0, self.dimension), dtype=np.float32)
        inputs = self._processor(
            text=list(texts), padding=True, truncation=True, return_tensors="pt"
        ).to(self.device)
        with torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return _normalize(features.cpu().numpy().astype(np.float32))


def encoder_from_spec(spec: str) -> Encoder:
    """``hash[:dim[:seed]]`` or ``hf:<model_id>``."""
    if spec.startswith("hash"):
        parts = spec.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 64
        seed = int(parts[2]) if len(parts) > 2 else 0
        return HashEncoder(dim, seed)
    if spec.startswith("hf:"):
        return SiglipEncoder(spec[3:])
    raise ValueError(f"unknown encoder spec {spec!r}; use hash[:dim[:seed]] or hf:<model>")
