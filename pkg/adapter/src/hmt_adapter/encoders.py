"""Text and image encoders behind one small interface.

The built-in "hashed" pair is fully deterministic and needs no downloads:
token vectors come from SHA-256-seeded draws, image vectors from a fixed
projection of an 8x8 thumbnail. They stand in for pretrained models at desk
scale. The "hf:" prefixed identifiers load transformers checkpoints when
the library and local weights are available; their native widths are
deterministically padded or truncated to the requested dimension, since the
bundle format stores one shared feature width.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


def _fit_width(vec: np.ndarray, dim: int) -> np.ndarray:
    if vec.shape[-1] == dim:
        return vec
    if vec.shape[-1] > dim:
        return vec[..., :dim]
    pad = [(0, 0)] * (vec.ndim - 1) + [(0, dim - vec.shape[-1])]
    return np.pad(vec, pad)


class HashedTextEncoder:
    """Deterministic token embeddings from SHA-256 seeds; CLS = mean state."""

    def __init__(self, dim: int = 32):
        self.dim = dim
        self.name = f"hashed-text-{dim}"
        self._cache: dict[str, np.ndarray] = {}

    def _token_vec(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            seed = int.from_bytes(
                hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            vec = vec / np.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def encode_section(self, tokens: list[str]):
        """Returns (section feature, word features (len(tokens), dim))."""
        words = np.stack([self._token_vec(t) for t in tokens])
        cls = words.mean(axis=0)
        norm = np.linalg.norm(cls)
        if norm > 0:
            cls = cls / norm
        return cls, words


class HashedImageEncoder:
    """8x8 grayscale thumbnail + channel means, fixed random projection."""

    def __init__(self, dim: int = 32):
        self.dim = dim
        self.name = f"hashed-image-{dim}"
        rng = np.random.default_rng(0xC0FFEE)
        self._projection = rng.standard_normal((67, dim)) / np.sqrt(67)

    def encode_image(self, path: str) -> np.ndarray:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            gray = np.asarray(rgb.convert("L").resize((8, 8)),
                              dtype=np.float64) / 255.0
            means = np.asarray(rgb.resize((1, 1)), dtype=np.float64)
        raw = np.concatenate([gray.reshape(-1), means.reshape(-1) / 255.0])
        return raw @ self._projection


class PretrainedTextEncoder:
    """BERT-style encoder; word features are first-subtoken hidden states."""

    def __init__(self, model_name: str, dim: int = 32):
        import torch  # noqa: F401
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).eval()
        self.dim = dim
        self.name = f"hf-text-{model_name}"

    def encode_section(self, tokens: list[str]):
        import torch

        enc = self.tokenizer(tokens, is_split_into_words=True,
                             return_tensors="pt", truncation=True)
        with torch.no_grad():
            states = self.model(**enc).last_hidden_state[0].numpy()
        word_ids = enc.word_ids(0)
        first = {}
        for pos, wid in enumerate(word_ids):
            if wid is not None and wid not in first:
                first[wid] = pos
        rows = [states[first[i]] if i in first else np.zeros(states.shape[1])
                for i in range(len(tokens))]
        return (_fit_width(states[0], self.dim),
                _fit_width(np.stack(rows), self.dim))


class PretrainedImageEncoder:
    """CLIP-style vision tower; the pooled embedding is the image feature."""

    def __init__(self, model_name: str, dim: int = 32):
        import torch  # noqa: F401
        from transformers import AutoImageProcessor, AutoModel

        self.processor = AutoImageProcessor.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name).eval()
        self.dim = dim
        self.name = f"hf-image-{model_name}"

    def encode_image(self, path: str) -> np.ndarray:
        import torch

        with Image.open(path) as img:
            inputs = self.processor(images=img.convert("RGB"),
                                    return_tensors="pt")
        with torch.no_grad():
            out = self.model(**inputs)
        pooled = getattr(out, "pooler_output", None)
        if pooled is None:
            pooled = out.last_hidden_state[:, 0]
        return _fit_width(pooled[0].numpy().astype(np.float64), self.dim)


def get_text_encoder(spec: str, dim: int):
    if spec == "hashed":
        return HashedTextEncoder(dim)
    if spec.startswith("hf:"):
        return PretrainedTextEncoder(spec[3:], dim)
    raise ValueError(f"unknown text encoder '{spec}'")


def get_image_encoder(spec: str, dim: int):
    if spec == "hashed":
        return HashedImageEncoder(dim)
    if spec.startswith("hf:"):
        return PretrainedImageEncoder(spec[3:], dim)
    raise ValueError(f"unknown image encoder '{spec}'")
