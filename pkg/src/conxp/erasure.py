"""Concept-erasure procedures behind one uniform contract: erase(z, mask)."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .core import (
    RCOND,
    BoolMask,
    ConceptBank,
    DimensionMismatchError,
    EmbeddingMatrix,
    _readonly,
    concept_strengths,
)

ERASER_KINDS = ("ortho", "splice", "leace")

SPLICE_LAMBDA = 0.01
SPLICE_EPS = 1e-6
SPLICE_MAX_SWEEPS = 10_000
SPLICE_COORD_TOL = 1e-10
LEACE_TRAIN_ROWS = 500


class EraseError(RuntimeError):
    """An erasure procedure could not produce a valid embedding."""


class SpliceConvergenceError(EraseError):
    """Coordinate descent hit the sweep cap before stabilizing."""


@dataclass(frozen=True, eq=False)
class SpliceDecomposition:
    """Nonnegative concept weights for one embedding plus reconstruction quality."""

    w: np.ndarray
    residual_cos: float

    def __init__(self, w: np.ndarray, residual_cos: float) -> None:
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("decomposition weights must be nonnegative")
        if not -1.0 <= residual_cos <= 1.0:
            raise ValueError("residual cosine outside [-1, 1]")
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "residual_cos", float(residual_cos))


@dataclass(frozen=True, eq=False)
class LeaceFit:
    """Fitted oriented projection P and recentering shift for one erased subset."""

    P: np.ndarray
    b_shift: np.ndarray
    trained_on: int
    concept_labels: np.ndarray

    def __init__(self, P, b_shift, trained_on, concept_labels) -> None:
        object.__setattr__(self, "P", _readonly(P))
        object.__setattr__(self, "b_shift", _readonly(b_shift))
        object.__setattr__(self, "trained_on", int(trained_on))
        labels = np.array(concept_labels)
        labels.setflags(write=False)
        object.__setattr__(self, "concept_labels", labels)


def _check_dims(z: np.ndarray, bank: ConceptBank, mask: BoolMask | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (bank.dim,):
        raise DimensionMismatchError(f"embedding shape {z.shape} vs bank dim {bank.dim}")
    if mask is not None and len(mask) != bank.size:
        raise DimensionMismatchError(f"mask length {len(mask)} vs vocabulary {bank.size}")
    return z


def ortho_erase(z: np.ndarray, bank: ConceptBank, mask: BoolMask) -> np.ndarray:
    """Minimum-change embedding that zeroes erased concept scores and keeps the rest.

    r = z - C G+ P_S (C^T z) with G = C^T C and P_S selecting the erased
    indices; among all score-feasible embeddings this is the closest to z.
    """
    z = _check_dims(z, bank, mask)
    erased = ~mask.bits
    if not erased.any():
        return z.copy()
    C = bank.C
    G = C.T @ C
    scores = C.T @ z
    correction = C @ (np.linalg.pinv(G, rcond=RCOND) @ (scores * erased))
    return z - correction


def splice_decompose(
    z: np.ndarray,
    bank: ConceptBank,
    lam: float = SPLICE_LAMBDA,
    eps: float = SPLICE_EPS,
    max_sweeps: int = SPLICE_MAX_SWEEPS,
) -> SpliceDecomposition:
    """Sparse nonnegative concept decomposition of the normalized embedding.

    Minimizes 0.5 || z/|z| - C w ||^2 + lam * sum(w) subject to w >= 0 by
    cyclic coordinate descent with clipping; converges when no coordinate
    moves more than SPLICE_COORD_TOL in a full sweep.
    """
    z = _check_dims(z, bank)
    zn = np.linalg.norm(z)
    if zn == 0.0:
        raise EraseError("cannot decompose the zero embedding")
    target = z / zn
    C = bank.C
    G = C.T @ C
    b = C.T @ target
    diag = np.diag(G)
    n = bank.size
    w = np.zeros(n)
    Gw = np.zeros(n)
    converged = False
    for _ in range(max_sweeps):
        delta_max = 0.0
        for i in range(n):
            wi = max(0.0, w[i] + (b[i] - Gw[i] - lam) / diag[i])
            step = wi - w[i]
            if step != 0.0:
                Gw += step * G[:, i]
                w[i] = wi
                delta_max = max(delta_max, abs(step))
        if delta_max <= SPLICE_COORD_TOL:
            converged = True
            break
    if not converged:
        # stationarity within eps still counts; only report genuine failures
        grad = b - Gw - lam
        active_bad = np.abs(grad[w > 0]).max(initial=0.0)
        inactive_bad = grad[w == 0].max(initial=0.0)
        if max(active_bad, inactive_bad) > eps:
            raise SpliceConvergenceError(
                f"no stationary point within eps={eps} after {max_sweeps} sweeps"
            )
    recon = C @ w
    rn = np.linalg.norm(recon)
    residual_cos = 0.0 if rn == 0.0 else float(np.clip(recon @ target / rn, -1.0, 1.0))
    return SpliceDecomposition(w, residual_cos)


def splice_erase(
    decomp: SpliceDecomposition, bank: ConceptBank, mask: BoolMask
) -> np.ndarray:
    """Reconstruction from retained weights only; an all-retain mask still
    returns the reconstruction rather than the original embedding."""
    if len(decomp.w) != bank.size:
        raise DimensionMismatchError("decomposition size disagrees with vocabulary")
    if len(mask) != bank.size:
        raise DimensionMismatchError(f"mask length {len(mask)} vs vocabulary {bank.size}")
    return bank.C @ (decomp.w * mask.bits)


def _pinv_sqrt_pair(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Whitening / unwhitening pair for a PSD matrix, passing singular
    directions through untouched."""
    evals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    evals = np.clip(evals, 0.0, None)
    cutoff = evals.max(initial=0.0) * sigma.shape[0] * np.finfo(np.float64).eps
    keep = evals > cutoff
    inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, evals, 1.0)), 0.0)
    sqrt = np.where(keep, np.sqrt(evals), 0.0)
    W = (vecs * inv_sqrt) @ vecs.T
    W_inv = (vecs * sqrt) @ vecs.T
    return W, W_inv


def leace_fit(
    train: EmbeddingMatrix,
    labels: np.ndarray,
    concept_subset,
) -> LeaceFit:
    """Closed-form oriented projection annulling the sample cross-covariance
    between embeddings and the selected concepts' binary labels.

    The covariance is whitened, the span of the whitened cross-covariance is
    projected out, and the result unwhitened; the affine shift recenters so
    class-conditional means coincide after erasure.
    """
    if len(train) < 2:
        raise ValueError("LEACE needs at least two training samples")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] != len(train):
        raise ValueError("label matrix rows must align with training samples")
    subset = sorted(int(i) for i in set(concept_subset))
    if any(i < 0 or i >= labels.shape[1] for i in subset):
        raise IndexError("concept subset outside label matrix")

    Z = train.data
    L = labels[:, subset] if subset else labels[:, :0]
    mean_z = Z.mean(axis=0)
    Zc = Z - mean_z
    d = Z.shape[1]
    if not subset:
        return LeaceFit(np.eye(d), np.zeros(d), len(train), labels)

    denom = len(train) - 1
    sigma_zz = (Zc.T @ Zc) / denom
    sigma_zc = (Zc.T @ (L - L.mean(axis=0))) / denom
    W, W_inv = _pinv_sqrt_pair(sigma_zz)

    u, s, _ = np.linalg.svd(W @ sigma_zc, full_matrices=False)
    # absolute floor so an already-annulled (numerically zero) cross-covariance
    # keeps no direction and the transform stays the identity
    floor = max(d, len(subset)) * np.finfo(np.float64).eps
    u = u[:, s > floor * max(s.max(initial=0.0), 1.0)]
    P = np.eye(d) - W_inv @ u @ (u.T @ W)
    b_shift = mean_z - P @ mean_z
    return LeaceFit(P, b_shift, len(train), labels)


def leace_erase(fit: LeaceFit, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (fit.P.shape[1],):
        raise DimensionMismatchError(f"embedding shape {z.shape} vs fit dim {fit.P.shape[1]}")
    return fit.P @ z + fit.b_shift


def strength_sign_labels(train: EmbeddingMatrix, bank: ConceptBank) -> np.ndarray:
    """Default binary concept labels for LEACE fitting: strength > 0 per sample."""
    strengths = np.vstack([concept_strengths(row, bank).values for row in train.data])
    return (strengths > 0).astype(np.uint8)


class Eraser:
    """Uniform dispatcher over the three erasure procedures.

    Carries per-kind state: the concept bank, the SPLiCE decomposition cache
    keyed by caller-supplied image key, and one memoized LeaceFit per distinct
    erased subset (lock-protected; fits are immutable once published).
    """

    def __init__(
        self,
        kind: str,
        bank: ConceptBank,
        *,
        train: EmbeddingMatrix | None = None,
        train_labels: np.ndarray | None = None,
        splice_lambda: float = SPLICE_LAMBDA,
        splice_eps: float = SPLICE_EPS,
        leace_train_rows: int = LEACE_TRAIN_ROWS,
    ) -> None:
        if kind not in ERASER_KINDS:
            raise ValueError(f"unknown eraser kind {kind!r}")
        self.kind = kind
        self.bank = bank
        self.splice_lambda = splice_lambda
        self.splice_eps = splice_eps
        self._splice_cache: dict[str, SpliceDecomposition] = {}
        self._leace_cache: dict[tuple[int, ...], LeaceFit] = {}
        self._lock = threading.Lock()
        self._train: EmbeddingMatrix | None = None
        self._train_labels: np.ndarray | None = None
        if kind == "leace":
            if train is None:
                raise ValueError("LEACE requires a training sample")
            rows = min(leace_train_rows, len(train))
            self._train = EmbeddingMatrix(train.data[:rows], train.image_ids[:rows])
            if train_labels is not None:
                train_labels = np.asarray(train_labels)
                if train_labels.shape != (len(train), bank.size):
                    raise ValueError("training label matrix shape disagrees with bundle")
                self._train_labels = train_labels[:rows].astype(np.uint8)
            else:
                self._train_labels = strength_sign_labels(self._train, bank)
        # precomputed so per-mask ortho erasure is two mat-vecs
        G = bank.C.T @ bank.C
        self._CGp = bank.C @ np.linalg.pinv(G, rcond=RCOND)

    def decompose(self, z: np.ndarray, image_key: str | None = None) -> SpliceDecomposition:
        if image_key is not None and image_key in self._splice_cache:
            return self._splice_cache[image_key]
        decomp = splice_decompose(z, self.bank, self.splice_lambda, self.splice_eps)
        if image_key is not None:
            self._splice_cache[image_key] = decomp
        return decomp

    def _leace_fit_for(self, subset: tuple[int, ...]) -> LeaceFit:
        with self._lock:
            fit = self._leace_cache.get(subset)
            if fit is None:
                fit = leace_fit(self._train, self._train_labels, subset)
                self._leace_cache[subset] = fit
            return fit

    def erase(self, z: np.ndarray, mask: BoolMask, image_key: str | None = None) -> np.ndarray:
        z = _check_dims(z, self.bank, mask)
        if self.kind == "ortho":
            erased = ~mask.bits
            if not erased.any():
                return z.copy()
            return z - self._CGp @ ((self.bank.C.T @ z) * erased)
        if self.kind == "splice":
            return splice_erase(self.decompose(z, image_key), self.bank, mask)
        subset = mask.erased_indices  # canonical sorted tuple keys the memo
        if not subset:
            return z.copy()
        return leace_erase(self._leace_fit_for(subset), z)
