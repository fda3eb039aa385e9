"""Embedding-space domain types, concept strengths, heads, and linear-map fitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Singular values below RCOND * sigma_max are treated as zero in every
# rank-revealing solve (lstsq / pinv) so rank-deficient concept sets behave
# like their pseudoinverse limits.
RCOND = 1e-10


class DimensionMismatchError(ValueError):
    """Operands disagree on the embedding dimension or vector length."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)  # always copy; never freeze caller data
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Rows of embedding vectors sharing one real space of dimension d."""

    data: np.ndarray
    image_ids: tuple[str, ...]

    def __init__(self, data: np.ndarray, image_ids) -> None:
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        ids = tuple(str(i) for i in image_ids)
        if data.shape[0] != len(ids):
            raise ValueError(f"{data.shape[0]} rows but {len(ids)} image ids")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids")
        if data.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.isfinite(data).all():
            raise ValueError("non-finite embedding entries")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "image_ids", ids)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.data.shape[0]

    def row(self, image_id: str) -> np.ndarray:
        return self.data[self.image_ids.index(image_id)]


@dataclass(frozen=True, eq=False)
class ConceptBank:
    """Concept vocabulary: names plus the d x n matrix of stacked unit columns."""

    names: tuple[str, ...]
    C: np.ndarray

    UNIT_TOL = 1e-6

    def __init__(self, names, C: np.ndarray) -> None:
        names = tuple(str(n) for n in names)
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        if len(names) < 1:
            raise ValueError("vocabulary must hold at least one concept")
        if len(set(names)) != len(names):
            raise ValueError("concept names must be distinct")
        if C.shape[1] != len(names):
            raise ValueError(f"{C.shape[1]} columns but {len(names)} names")
        norms = np.linalg.norm(C, axis=0)
        if np.any(np.abs(norms - 1.0) > self.UNIT_TOL):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"concept columns must be unit norm (off by {worst:.3g})")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "C", _readonly(C))

    @property
    def dim(self) -> int:
        return self.C.shape[0]

    @property
    def size(self) -> int:
        return self.C.shape[1]

    def subset(self, indices) -> "ConceptBank":
        idx = list(indices)
        return ConceptBank([self.names[i] for i in idx], self.C[:, idx])


@dataclass(frozen=True, eq=False)
class StrengthVector:
    """Per-concept cosine similarities of one embedding; zero embedding maps to zeros."""

    values: np.ndarray

    def __init__(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        object.__setattr__(self, "values", _readonly(values))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ModelHead:
    """Classifier head over the embedding space: affine scores or zero-shot cosine."""

    kind: str  # "linear" | "zeroshot"
    class_names: tuple[str, ...]
    W: np.ndarray | None = None  # linear: m x d
    b: np.ndarray | None = None  # linear: m
    K: np.ndarray | None = None  # zeroshot: d x m, unit columns

    UNIT_TOL = 1e-6

    def __init__(self, kind, class_names, W=None, b=None, K=None) -> None:
        class_names = tuple(str(n) for n in class_names)
        m = len(class_names)
        if m < 2:
            raise ValueError("head needs at least two classes")
        if kind == "linear":
            if W is None:
                raise ValueError("linear head requires weights")
            W = np.atleast_2d(np.asarray(W, dtype=np.float64))
            b = np.zeros(m) if b is None else np.asarray(b, dtype=np.float64)
            if W.shape[0] != m or b.shape != (m,):
                raise ValueError("head weight/bias shapes disagree with class count")
            object.__setattr__(self, "W", _readonly(W))
            object.__setattr__(self, "b", _readonly(b))
            object.__setattr__(self, "K", None)
        elif kind == "zeroshot":
            if K is None:
                raise ValueError("zeroshot head requires class vectors")
            K = np.atleast_2d(np.asarray(K, dtype=np.float64))
            if K.shape[1] != m:
                raise ValueError("class-vector count disagrees with class names")
            norms = np.linalg.norm(K, axis=0)
            if np.any(np.abs(norms - 1.0) > self.UNIT_TOL):
                raise ValueError("zeroshot class vectors must be unit norm")
            object.__setattr__(self, "K", _readonly(K))
            object.__setattr__(self, "W", None)
            object.__setattr__(self, "b", None)
        else:
            raise ValueError(f"unknown head kind {kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "class_names", class_names)

    @property
    def dim(self) -> int:
        return self.W.shape[1] if self.kind == "linear" else self.K.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Affine map z -> W z + d_off between two embedding spaces."""

    W: np.ndarray
    d_off: np.ndarray

    def __init__(self, W: np.ndarray, d_off: np.ndarray) -> None:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        d_off = np.asarray(d_off, dtype=np.float64)
        if d_off.shape != (W.shape[0],):
            raise ValueError("offset length disagrees with output dimension")
        if not (np.isfinite(W).all() and np.isfinite(d_off).all()):
            raise ValueError("non-finite map entries")
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "d_off", _readonly(d_off))

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z @ self.W.T + self.d_off


@dataclass(frozen=True)
class BoolMask:
    """Retention mask over the vocabulary: bit 1 keeps a concept, bit 0 erases it."""

    bits: np.ndarray = field(hash=False, compare=False)

    def __init__(self, bits) -> None:
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 1:
            raise ValueError("mask must be one-dimensional")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def retain_all(cls, n: int) -> "BoolMask":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def retaining(cls, indices, n: int) -> "BoolMask":
        bits = np.zeros(n, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    @classmethod
    def erasing(cls, indices, n: int) -> "BoolMask":
        bits = np.ones(n, dtype=bool)
        bits[list(indices)] = False
        return cls(bits)

    def __len__(self) -> int:
        return self.bits.shape[0]

    @property
    def erased_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(~self.bits))

    @property
    def retained_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    def __eq__(self, other) -> bool:
        return isinstance(other, BoolMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())


def concept_strengths(z: np.ndarray, bank: ConceptBank) -> StrengthVector:
    """Cosine of the embedding against every concept column; zero embedding gives zeros."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (bank.dim,):
        raise DimensionMismatchError(f"embedding shape {z.shape} vs bank dim {bank.dim}")
    zn = np.linalg.norm(z)
    if zn == 0.0:
        return StrengthVector(np.zeros(bank.size))
    cn = np.linalg.norm(bank.C, axis=0)
    values = (bank.C.T @ z) / (zn * cn)
    return StrengthVector(np.clip(values, -1.0, 1.0))


def sign_map(st: StrengthVector, subset) -> dict[int, int]:
    """Strict sign of each selected strength; no deadband, sgn(0) = 0."""
    n = len(st)
    out: dict[int, int] = {}
    for i in subset:
        i = int(i)
        if not 0 <= i < n:
            raise IndexError(f"concept index {i} outside vocabulary of size {n}")
        out[i] = int(np.sign(st.values[i]))
    return out


def predict(head: ModelHead, z: np.ndarray) -> int:
    """Argmax class for an embedding; exact score ties break to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.dim,):
        raise DimensionMismatchError(f"embedding shape {z.shape} vs head dim {head.dim}")
    if head.kind == "linear":
        scores = head.W @ z + head.b
    else:
        zn = np.linalg.norm(z)
        scores = np.zeros(head.num_classes) if zn == 0.0 else (head.K.T @ z) / zn
    return int(np.argmax(scores))


def fit_linear_map(src: EmbeddingMatrix, dst: EmbeddingMatrix) -> LinearMap:
    """Least-squares affine map from src rows to dst rows.

    Solves the augmented system [src | 1] X ~ dst; when underdetermined the
    minimum-Frobenius-norm solution is returned.
    """
    if src.image_ids != dst.image_ids:
        raise ValueError("source and destination image ids are not aligned")
    if len(src) == 0:
        raise ValueError("cannot fit a map on zero samples")
    A = np.hstack([src.data, np.ones((len(src), 1))])
    X, *_ = np.linalg.lstsq(A, dst.data, rcond=RCOND)
    return LinearMap(X[:-1].T, X[-1])


def fit_ridge_probe(
    pos: EmbeddingMatrix, neg: EmbeddingMatrix, lam: float
) -> tuple[np.ndarray, float]:
    """Closed-form ridge regression to targets 1 (pos) and 0 (neg).

    Returns (w, b0) with score(z) = w . z + b0; the intercept is unpenalized,
    so lam -> inf drives w to zero and b0 to the mean target.
    """
    if pos.dim != neg.dim:
        raise DimensionMismatchError("positive and negative sets disagree on dimension")
    if lam < 0:
        raise ValueError("ridge penalty must be nonnegative")
    X = np.vstack([pos.data, neg.data])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    d = X.shape[1]
    # pinv keeps the lam = 0 case well defined on degenerate designs
    w = np.linalg.pinv(Xc.T @ Xc + lam * np.eye(d), rcond=RCOND) @ (Xc.T @ yc)
    b0 = float(y_mean - w @ x_mean)
    return w, b0


def probe_score(probe: tuple[np.ndarray, float], z: np.ndarray) -> float:
    w, b0 = probe
    return float(np.asarray(z, dtype=np.float64) @ w + b0)
