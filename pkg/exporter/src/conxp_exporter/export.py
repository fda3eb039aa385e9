"""Bundle export: concept vectors from caption templates, paired embeddings."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conxp import ConceptBank, EmbeddingMatrix, ModelHead, predict, save_bundle
from conxp.erasure import strength_sign_labels

from .encoders import EncoderPair, resolve_encoders
from .templates import CAPTION_TEMPLATES


@dataclass(frozen=True)
class ExportConfig:
    """What to export and how.

    reference_encoder embeds text and images into the shared space the bundle
    lives in; vision_encoder, when given, supplies the second half of the
    paired samples used to fit maps between the two spaces. centering_corpus
    defaults to the vocabulary itself.
    """

    reference_encoder: str
    vision_encoder: str | None = None
    caption_templates: tuple[str, ...] = CAPTION_TEMPLATES
    center: bool = True
    centering_corpus: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.caption_templates:
            raise ValueError("caption template list must be nonempty")


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def _phrase_vector(pair: EncoderPair, templates, name: str) -> np.ndarray:
    return np.mean([pair.encode_text(t.format(name)) for t in templates], axis=0)


def text_centering_mean(pair: EncoderPair, corpus) -> np.ndarray:
    """Mean raw text embedding over the centering word list."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("centering corpus must be nonempty")
    return np.mean([pair.encode_text(word) for word in corpus], axis=0)


def export_concepts(config: ExportConfig, vocabulary) -> np.ndarray:
    """Template-averaged, optionally mean-centered, unit-normalized concept
    vectors, stacked as the columns of a d x n array."""
    vocabulary = list(vocabulary)
    if not vocabulary:
        raise ValueError("vocabulary must be nonempty")
    pair = resolve_encoders(config.reference_encoder)
    mu = None
    if config.center:
        corpus = config.centering_corpus or tuple(vocabulary)
        mu = text_centering_mean(pair, corpus)
    cols = []
    for name in vocabulary:
        v = _phrase_vector(pair, config.caption_templates, name)
        if mu is not None:
            v = v - mu
        cols.append(_normalize(v))
    return np.column_stack(cols)


def export_embeddings(
    config: ExportConfig, items: list[tuple[str, bytes]]
) -> tuple[list[str], np.ndarray, np.ndarray | None]:
    """Reference-space rows (centered by the dataset image mean, normalized)
    plus, when a vision encoder is configured, the aligned raw vision rows."""
    if not items:
        raise ValueError("image set must be nonempty")
    ids = [str(i) for i, _ in items]
    pair = resolve_encoders(config.reference_encoder)
    raw = np.vstack([pair.encode_image(payload) for _, payload in items])
    if config.center:
        raw = raw - raw.mean(axis=0)
    ref = np.vstack([_normalize(row) for row in raw])
    vision = None
    if config.vision_encoder is not None:
        vpair = resolve_encoders(config.vision_encoder)
        vision = np.vstack([vpair.encode_image(payload) for _, payload in items])
    return ids, ref, vision


def zeroshot_head(config: ExportConfig, class_names) -> ModelHead:
    """Class vectors built exactly like concept vectors."""
    K = export_concepts(config, list(class_names))
    return ModelHead("zeroshot", list(class_names), K=K)


def export_bundle(
    config: ExportConfig,
    items: list[tuple[str, bytes]],
    vocabulary,
    class_names,
    out: str | Path,
    head: ModelHead | None = None,
    true_labels: dict[str, int] | None = None,
) -> Path:
    """Build and write a full bundle.

    The head defaults to zero-shot over the class names; predictions are
    computed here so the labels table always carries them, and binary concept
    labels (strength sign) are written for LEACE fitting and the sanity
    checks.
    """
    vocabulary = list(vocabulary)
    if len(set(vocabulary)) != len(vocabulary):
        raise ValueError("bundle vocabularies must not repeat names")
    C = export_concepts(config, vocabulary)
    ids, ref, vision = export_embeddings(config, items)
    embeddings = EmbeddingMatrix(ref, ids)
    bank = ConceptBank(vocabulary, C)
    if head is None:
        head = zeroshot_head(config, class_names)
    labels = {}
    for image_id in ids:
        pred = predict(head, embeddings.row(image_id))
        true = true_labels.get(image_id, pred) if true_labels else pred
        labels[image_id] = (int(true), pred)
    extra = {"vision_embeddings": vision} if vision is not None else None
    return save_bundle(
        out,
        embeddings,
        bank,
        head,
        labels=labels,
        concept_labels=strength_sign_labels(embeddings, bank),
        extra_arrays=extra,
    )


def read_dataset_dir(path: str | Path) -> list[tuple[str, bytes]]:
    """Every regular file under the directory becomes one item, keyed by its
    relative path; sorted for reproducible row order."""
    root = Path(path)
    items = sorted(p for p in root.rglob("*") if p.is_file())
    if not items:
        raise ValueError(f"no files under {root}")
    return [(str(p.relative_to(root)), p.read_bytes()) for p in items]
