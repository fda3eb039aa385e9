from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conxp import ConceptBank, Eraser, InstanceContext, ModelHead


def unit_columns(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    C = rng.standard_normal((d, n))
    return C / np.linalg.norm(C, axis=0)


def random_bank(rng: np.random.Generator, d: int, n: int) -> ConceptBank:
    return ConceptBank([f"c{i}" for i in range(n)], unit_columns(rng, d, n))


@dataclass
class BitsWorld:
    """Synthetic setup where the oracle is a boolean function of retained bits.

    With the identity concept bank and the all-ones embedding, ortho erasure
    maps a retention mask straight to its 0/1 indicator vector, so a linear
    multiclass head over that vector realizes an arbitrary arrangement of
    halfspace cells on the hypercube.
    """

    W: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def pred_bits(self, bits: np.ndarray) -> int:
        return int(np.argmax(self.W @ np.asarray(bits, dtype=float) + self.b))

    def head(self) -> ModelHead:
        return ModelHead("linear", [f"k{i}" for i in range(self.W.shape[0])], W=self.W, b=self.b)

    def ctx(self, image_id: str = "img0") -> InstanceContext:
        bank = ConceptBank([f"c{i}" for i in range(self.n)], np.eye(self.n))
        eraser = Eraser("ortho", bank)
        return InstanceContext.build(image_id, np.ones(self.n), eraser, self.head())


def random_monotone_world(rng: np.random.Generator, n: int, m: int = 3) -> BitsWorld:
    """Head monotone toward the all-ones prediction, admitted at all-zeros.

    Class 0's score gap to every rival has nonnegative per-bit slopes, so
    once class 0 wins it keeps winning as bits are added; biases are drawn so
    class 0 wins at all-ones but loses at all-zeros.
    """
    while True:
        w0 = rng.uniform(-1.0, 1.0, size=n)
        W = [w0]
        b = [0.0]
        for _ in range(m - 1):
            slope_drop = rng.uniform(0.05, 1.0, size=n)
            W.append(w0 - slope_drop)
            b.append(rng.uniform(0.0, float(slope_drop.sum())))
        world = BitsWorld(np.vstack(W), np.asarray(b))
        if world.pred_bits(np.ones(n)) == 0 and world.pred_bits(np.zeros(n)) != 0:
            return world


def random_nonmonotone_world(rng: np.random.Generator, n: int, m: int = 3) -> BitsWorld:
    """Unconstrained random head, resampled until admitted and verified
    non-monotone by scanning every (mask, added-bit) pair."""
    while True:
        world = BitsWorld(rng.standard_normal((m, n)), 0.5 * rng.standard_normal(m))
        k = world.pred_bits(np.ones(n))
        if world.pred_bits(np.zeros(n)) == k:
            continue
        if _is_monotone(world, k):
            continue
        return world


def additive_monotone_world(n: int = 4) -> BitsWorld:
    # class 0 score = b0 + b1 against a constant rival: perfectly monotone,
    # admitted, with singleton axps and the cxp {0,1}
    W = np.zeros((2, n))
    W[0, 0] = W[0, 1] = 1.0
    return BitsWorld(W, np.array([0.0, 0.5]))


def anti_monotone_world() -> BitsWorld:
    """Prediction 0 holds at the axp {0} and at all-ones, but flips whenever
    one or two extra concepts are retained; two rivals with opposing slopes
    cover every intermediate point."""
    W = np.array(
        [
            [2.0, 0.0, 0.0, 0.0],
            [0.0, 4.0, 4.0, -20.0],
            [0.0, -1.2, -1.2, 4.0],
        ]
    )
    b = np.array([-1.5, -1.2, -2.0])
    return BitsWorld(W, b)


def _is_monotone(world: BitsWorld, k: int) -> bool:
    n = world.n
    for mask in range(2**n):
        bits = np.array([(mask >> i) & 1 for i in range(n)], dtype=float)
        if world.pred_bits(bits) != k:
            continue
        for j in range(n):
            if bits[j] == 0:
                grown = bits.copy()
                grown[j] = 1.0
                if world.pred_bits(grown) != k:
                    return False
    return True


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
