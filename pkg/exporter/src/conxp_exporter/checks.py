"""Linear-map sanity checks: strength retention, erased-strength drop, and
cross-concept stability, evaluated with the core ridge probe and erasure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from conxp import (
    BoolMask,
    Bundle,
    EmbeddingMatrix,
    Eraser,
    LinearMap,
    fit_linear_map,
    fit_ridge_probe,
    probe_score,
)
from conxp.erasure import strength_sign_labels


@dataclass(frozen=True)
class CheckRow:
    check: str  # "check1" | "check2" | "check3"
    subject: str  # concept name, or "a->b" for cross-concept rows
    n_images: int
    worst: float
    threshold: float
    passed: bool


def identity_maps(dim: int) -> tuple[LinearMap, LinearMap]:
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return LinearMap(eye, zero), LinearMap(eye, zero)


def fit_maps(bundle: Bundle) -> tuple[LinearMap, LinearMap]:
    """Forward (vision -> reference) and learnt inverse maps from the paired
    samples; literal identities when the bundle carries no vision array."""
    vision = bundle.extra_arrays.get("vision_embeddings")
    if vision is None:
        return identity_maps(bundle.embeddings.dim)
    ids = bundle.embeddings.image_ids
    vision_m = EmbeddingMatrix(vision, ids)
    forward = fit_linear_map(vision_m, bundle.embeddings)
    inverse = fit_linear_map(bundle.embeddings, vision_m)
    return forward, inverse


def _concept_labels(bundle: Bundle) -> np.ndarray:
    if bundle.concept_labels is not None:
        return np.asarray(bundle.concept_labels)
    return strength_sign_labels(bundle.embeddings, bundle.bank)


def sanity_checks(
    bundle: Bundle,
    beta: float,
    gamma: float,
    eraser_kind: str = "ortho",
    probe_lambda: float = 1e-3,
) -> list[CheckRow]:
    """Evaluate the three round-trip checks on every concept (pair).

    Probes score concept presence in the vision space; checks 1 and 2 run on
    the images where the concept is present, check 3 on images where the
    probed concept is present and the erased one absent. Images whose probe
    score is exactly zero cannot anchor a relative deviation and are skipped.
    """
    forward, inverse = fit_maps(bundle)
    labels = _concept_labels(bundle)
    vision = bundle.extra_arrays.get("vision_embeddings")
    if vision is None:
        vision = bundle.embeddings.data
    bank = bundle.bank
    eraser = Eraser(
        eraser_kind,
        bank,
        train=bundle.embeddings if eraser_kind == "leace" else None,
        train_labels=bundle.concept_labels if eraser_kind == "leace" else None,
    )

    probes = {}
    for ci, name in enumerate(bank.names):
        pos_rows = vision[labels[:, ci] == 1]
        neg_rows = vision[labels[:, ci] == 0]
        if len(pos_rows) == 0 or len(neg_rows) == 0:
            continue
        pos = EmbeddingMatrix(pos_rows, [f"p{i}" for i in range(len(pos_rows))])
        neg = EmbeddingMatrix(neg_rows, [f"n{i}" for i in range(len(neg_rows))])
        probes[ci] = fit_ridge_probe(pos, neg, probe_lambda)

    def cav(ci: int, x_vision: np.ndarray) -> float:
        return probe_score(probes[ci], x_vision)

    def erased(x_mapped: np.ndarray, ci: int) -> np.ndarray:
        return inverse.apply(eraser.erase(x_mapped, BoolMask.erasing([ci], bank.size)))

    rows: list[CheckRow] = []
    for ci in sorted(probes):
        name = bank.names[ci]
        present = np.flatnonzero(labels[:, ci] == 1)

        rel_devs = []
        drop_ok = []
        for i in present:
            x_vis = vision[i]
            mapped = forward.apply(x_vis)
            base = cav(ci, x_vis)
            back = cav(ci, inverse.apply(mapped))
            if base != 0.0:
                rel_devs.append(abs(base - back) / abs(base))
            after = cav(ci, erased(mapped, ci))
            drop_ok.append(back > after)
        worst1 = max(rel_devs, default=0.0)
        rows.append(CheckRow("check1", name, len(rel_devs), worst1, beta, worst1 <= beta))
        frac2 = float(np.mean(drop_ok)) if drop_ok else 0.0
        rows.append(
            CheckRow("check2", name, len(drop_ok), 1.0 - frac2, 0.0, bool(drop_ok) and frac2 == 1.0)
        )

    for ca in sorted(probes):
        for cb in sorted(probes):
            if ca == cb:
                continue
            eligible = np.flatnonzero((labels[:, ca] == 1) & (labels[:, cb] == 0))
            rel_devs = []
            for i in eligible:
                base = cav(ca, vision[i])
                if base == 0.0:
                    continue
                after = cav(ca, erased(forward.apply(vision[i]), cb))
                rel_devs.append(abs(base - after) / abs(base))
            worst3 = max(rel_devs, default=0.0)
            rows.append(
                CheckRow(
                    "check3",
                    f"{bank.names[ca]}->{bank.names[cb]}",
                    len(rel_devs),
                    worst3,
                    gamma,
                    worst3 <= gamma,
                )
            )
    return rows
