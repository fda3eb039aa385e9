"""Pluggable text/image encoder pairs.

Model weights are external assets; real backbones are wired in through the
``module:attr`` spec, which must name a zero-argument factory returning an
EncoderPair. The ``toy:`` family provides fully deterministic stand-ins so
exports and their tests run with no ML runtime at all.
"""
from __future__ import annotations

import hashlib
import importlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class EncoderPair:
    """A text encoder and an image encoder emitting vectors of fixed width.

    encode_text maps a caption string to a vector; encode_image maps raw file
    bytes to one. Both must be deterministic for reproducible exports.
    """

    dim: int
    encode_text: Callable[[str], np.ndarray]
    encode_image: Callable[[bytes], np.ndarray]


def _hash_vector(payload: bytes, dim: int, salt: bytes) -> np.ndarray:
    digest = hashlib.sha256(salt + payload).digest()
    seed = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim)


def toy_encoders(seed: int, dim: int = 16) -> EncoderPair:
    """Deterministic pseudo-encoders: every distinct input gets a stable
    pseudo-random direction keyed by a content hash."""
    salt = f"toy-{seed}-{dim}".encode()

    def encode_text(text: str) -> np.ndarray:
        return _hash_vector(text.encode(), dim, salt + b"-txt")

    def encode_image(raw: bytes) -> np.ndarray:
        return _hash_vector(raw, dim, salt + b"-img")

    return EncoderPair(dim, encode_text, encode_image)


def resolve_encoders(spec: str) -> EncoderPair:
    """Build an EncoderPair from a spec string.

    ``toy:<seed>[:<dim>]`` builds the deterministic toy pair; anything of the
    form ``module:attr`` is imported and called with no arguments.
    """
    if spec.startswith("toy:"):
        parts = spec.split(":")
        seed = int(parts[1])
        dim = int(parts[2]) if len(parts) > 2 else 16
        return toy_encoders(seed, dim)
    if ":" in spec:
        module_name, attr = spec.rsplit(":", 1)
        factory = getattr(importlib.import_module(module_name), attr)
        pair = factory()
        if not isinstance(pair, EncoderPair):
            raise TypeError(f"{spec} did not produce an EncoderPair")
        return pair
    raise ValueError(f"encoder spec must be toy:<seed>[:<dim>] or module:attr, got {spec!r}")
