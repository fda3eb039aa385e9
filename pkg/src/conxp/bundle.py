"""Bit-exact bundle format, JSONL explanation records, and run reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytics import RelevanceLabels
from .core import ConceptBank, EmbeddingMatrix, ModelHead

FORMAT_VERSION = "conxp-bundle/1"
REPORT_VERSION = "conxp-report/1"

_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "u1"}
# columns this far off unit norm are silently renormalized; beyond 1e-3 is an error
_RENORM_TOL = 1e-3


class BundleError(Exception):
    code = "bundle_error"


class ManifestError(BundleError):
    code = "manifest"


class SizeMismatchError(BundleError):
    code = "size_mismatch"


class NonFiniteError(BundleError):
    code = "non_finite"


class DuplicateIdError(BundleError):
    code = "duplicate_ids"


class NormalizationError(BundleError):
    code = "normalization"


class ChecksumError(BundleError):
    code = "checksum"


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def canonical_json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


@dataclass(frozen=True)
class Bundle:
    embeddings: EmbeddingMatrix
    bank: ConceptBank
    head: ModelHead
    labels: dict[str, tuple[int, int]] | None
    relevance: dict[str, RelevanceLabels] | None
    concept_labels: np.ndarray | None
    extra_arrays: dict[str, np.ndarray]


def _renormalize_columns(M: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    off = np.abs(norms - 1.0)
    if np.any(off > _RENORM_TOL):
        raise NormalizationError(
            f"{what} columns off unit norm by {off.max():.3g} (> {_RENORM_TOL})"
        )
    if np.any(off > ConceptBank.UNIT_TOL):
        return M / norms
    return M


def _write_array(path: Path, a: np.ndarray, dtype: str) -> dict:
    raw = np.ascontiguousarray(a).astype(_DTYPES[dtype]).tobytes(order="C")
    path.write_bytes(raw)
    return {
        "byte_order": "little-endian",
        "dtype": dtype,
        "file": path.name,
        "layout": "row-major",
        "name": path.stem,
        "shape": [int(a.shape[0]), int(a.shape[1])],
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def _read_array(root: Path, entry: dict) -> np.ndarray:
    for key in ("name", "dtype", "shape", "file", "byte_order", "layout"):
        if key not in entry:
            raise ManifestError(f"array entry missing {key!r}")
    if entry["dtype"] not in _DTYPES:
        raise ManifestError(f"unknown dtype {entry['dtype']!r}")
    if entry["byte_order"] != "little-endian" or entry["layout"] != "row-major":
        raise ManifestError("arrays must be little-endian row-major")
    rows, cols = (int(x) for x in entry["shape"])
    path = root / entry["file"]
    if not path.is_file():
        raise ManifestError(f"declared array file missing: {entry['file']}")
    raw = path.read_bytes()
    dt = np.dtype(_DTYPES[entry["dtype"]])
    expected = rows * cols * dt.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{entry['file']}: {len(raw)} bytes, expected {expected} for shape {rows}x{cols}"
        )
    if "sha256" in entry and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
        raise ChecksumError(f"{entry['file']}: checksum mismatch")
    a = np.frombuffer(raw, dtype=dt).reshape(rows, cols)
    if entry["dtype"] != "u8" and not np.isfinite(a).all():
        raise NonFiniteError(f"{entry['file']}: non-finite values")
    return a


def save_bundle(
    root: str | Path,
    embeddings: EmbeddingMatrix,
    bank: ConceptBank,
    head: ModelHead,
    labels: dict[str, tuple[int, int]] | None = None,
    relevance: dict[str, dict[str, str]] | None = None,
    concept_labels: np.ndarray | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write a bundle directory; float arrays are stored as f64 raw bytes so
    save -> load -> save round-trips bit-exactly."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    arrays = [
        _write_array(root / "embeddings.bin", embeddings.data, "f64"),
        _write_array(root / "concepts.bin", bank.C, "f64"),
    ]
    for name, a in (extra_arrays or {}).items():
        arrays.append(_write_array(root / f"{name}.bin", np.asarray(a, dtype=np.float64), "f64"))
    if head.kind == "linear":
        arrays.append(_write_array(root / "head_weights.bin", head.W, "f64"))
        arrays.append(_write_array(root / "head_bias.bin", head.b.reshape(-1, 1), "f64"))
        head_entry = {"bias": "head_bias", "kind": "linear", "weights": "head_weights"}
    else:
        arrays.append(_write_array(root / "class_vectors.bin", head.K, "f64"))
        head_entry = {"class_vectors": "class_vectors", "kind": "zeroshot"}
    if concept_labels is not None:
        concept_labels = np.asarray(concept_labels, dtype=np.uint8)
        arrays.append(_write_array(root / "concept_labels.bin", concept_labels, "u8"))
    manifest = {
        "arrays": sorted(arrays, key=lambda e: e["name"]),
        "class_names": list(head.class_names),
        "format_version": FORMAT_VERSION,
        "head": head_entry,
        "image_ids": list(embeddings.image_ids),
        "vocabulary": list(bank.names),
    }
    if labels is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "true_class", "pred_class"])
        for image_id in embeddings.image_ids:
            true_k, pred_k = labels[image_id]
            writer.writerow([image_id, int(true_k), int(pred_k)])
        (root / "labels.csv").write_text(buf.getvalue())
        manifest["labels_file"] = "labels.csv"
    if relevance is not None:
        (root / "relevance.json").write_text(canonical_json(relevance))
        manifest["relevance_file"] = "relevance.json"
    (root / "manifest.json").write_text(canonical_json(manifest))
    return root


def _load_labels(path: Path, image_ids: tuple[str, ...]) -> dict[str, tuple[int, int]]:
    out: dict[str, tuple[int, int]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            image_id = row["image_id"]
            if image_id in out:
                raise DuplicateIdError(f"labels repeat image id {image_id!r}")
            out[image_id] = (int(row["true_class"]), int(row["pred_class"]))
    missing = [i for i in image_ids if i not in out]
    if missing:
        raise ManifestError(f"labels missing for image id {missing[0]!r}")
    return out


def _load_relevance(path: Path, names: tuple[str, ...]) -> dict[str, RelevanceLabels]:
    raw = json.loads(path.read_text())
    index = {name: i for i, name in enumerate(names)}
    out: dict[str, RelevanceLabels] = {}
    for behavior, mapping in raw.items():
        unknown = [n for n in mapping if n not in index]
        if unknown:
            raise ManifestError(f"relevance names not in vocabulary: {unknown[:3]}")
        missing = [n for n in names if n not in mapping]
        if missing:
            raise ManifestError(f"relevance for {behavior!r} not total: missing {missing[0]!r}")
        bad = {v for v in mapping.values()} - {"relevant", "irrelevant"}
        if bad:
            raise ManifestError(f"relevance values must be relevant/irrelevant, got {bad}")
        relevant = frozenset(index[n] for n, v in mapping.items() if v == "relevant")
        out[behavior] = RelevanceLabels(relevant, len(names))
    return out


def load_bundle(root: str | Path) -> Bundle:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ManifestError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest does not parse: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestError(f"unsupported format_version {manifest.get('format_version')!r}")
    for key in ("arrays", "image_ids", "vocabulary", "class_names", "head"):
        if key not in manifest:
            raise ManifestError(f"manifest missing {key!r}")

    arrays = {e["name"]: _read_array(root, e) for e in manifest["arrays"]}
    for required in ("embeddings", "concepts"):
        if required not in arrays:
            raise ManifestError(f"manifest declares no {required!r} array")

    image_ids = [str(i) for i in manifest["image_ids"]]
    if len(set(image_ids)) != len(image_ids):
        raise DuplicateIdError("manifest image ids are not unique")
    emb = arrays["embeddings"].astype(np.float64)
    if emb.shape[0] != len(image_ids):
        raise SizeMismatchError(
            f"{emb.shape[0]} embedding rows but {len(image_ids)} image ids"
        )
    embeddings = EmbeddingMatrix(emb, image_ids)

    names = [str(n) for n in manifest["vocabulary"]]
    C = arrays["concepts"].astype(np.float64)
    if C.shape != (embeddings.dim, len(names)):
        raise SizeMismatchError(
            f"concepts shape {C.shape} vs (d={embeddings.dim}, n={len(names)})"
        )
    bank = ConceptBank(names, _renormalize_columns(C, "concept"))

    head_entry = manifest["head"]
    class_names = [str(c) for c in manifest["class_names"]]
    if head_entry.get("kind") == "linear":
        W = arrays[head_entry["weights"]].astype(np.float64)
        b = arrays[head_entry["bias"]].astype(np.float64).reshape(-1)
        head = ModelHead("linear", class_names, W=W, b=b)
    elif head_entry.get("kind") == "zeroshot":
        K = arrays[head_entry["class_vectors"]].astype(np.float64)
        head = ModelHead("zeroshot", class_names, K=_renormalize_columns(K, "class"))
    else:
        raise ManifestError(f"unknown head kind {head_entry.get('kind')!r}")
    if head.dim != embeddings.dim:
        raise SizeMismatchError("head dimension disagrees with embeddings")

    labels = None
    if "labels_file" in manifest:
        labels = _load_labels(root / manifest["labels_file"], embeddings.image_ids)
    relevance = None
    if "relevance_file" in manifest:
        relevance = _load_relevance(root / manifest["relevance_file"], bank.names)
    concept_labels = None
    if "concept_labels" in arrays:
        concept_labels = arrays["concept_labels"]
        if concept_labels.shape != (len(embeddings), bank.size):
            raise SizeMismatchError("concept_labels shape disagrees with bundle")
    known = {"embeddings", "concepts", "concept_labels"}
    known.update(v for v in head_entry.values() if isinstance(v, str))
    extra = {name: a for name, a in arrays.items() if name not in known}
    return Bundle(embeddings, bank, head, labels, relevance, concept_labels, extra)


@dataclass(frozen=True)
class ExplanationRecord:
    """One explanation as persisted to JSONL."""

    image_id: str
    kind: str
    concepts: tuple[int, ...]
    signs: tuple[int, ...]
    eraser: str
    enumerator: str
    elapsed_ns: int
    truncated: bool

    def __post_init__(self) -> None:
        if len(self.concepts) != len(self.signs):
            raise ValueError("concepts and signs must align")

    def to_json(self) -> str:
        return canonical_json_line(
            {
                "concepts": list(self.concepts),
                "elapsed_ns": int(self.elapsed_ns),
                "enumerator": self.enumerator,
                "eraser": self.eraser,
                "image_id": self.image_id,
                "kind": self.kind,
                "signs": list(self.signs),
                "truncated": bool(self.truncated),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ExplanationRecord":
        obj = json.loads(line)
        return cls(
            image_id=str(obj["image_id"]),
            kind=str(obj["kind"]),
            concepts=tuple(int(c) for c in obj["concepts"]),
            signs=tuple(int(s) for s in obj["signs"]),
            eraser=str(obj["eraser"]),
            enumerator=str(obj["enumerator"]),
            elapsed_ns=int(obj["elapsed_ns"]),
            truncated=bool(obj["truncated"]),
        )


def write_records(path: str | Path, records) -> None:
    Path(path).write_text("".join(r.to_json() for r in records))


def read_records(path: str | Path) -> list[ExplanationRecord]:
    lines = Path(path).read_text().splitlines()
    return [ExplanationRecord.from_json(line) for line in lines if line.strip()]


def write_report(path: str | Path, report: dict) -> None:
    body = dict(report)
    body["format_version"] = REPORT_VERSION
    Path(path).write_text(canonical_json(body))


def read_report(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text())
    if report.get("format_version") != REPORT_VERSION:
        raise ManifestError(f"unsupported report version {report.get('format_version')!r}")
    return report
