"""Fit-once/apply-many preprocessing pipeline.

Three steps, applied in this order: categorical-to-numeric encoding, feature
reduction (a curated name list or a PCA projection), then per-feature
standardization to zero mean and unit standard deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._docjson import digest_of, pretty_dumps
from .ingest import FeatureSchema, FlowRecord, schema_from_doc, schema_to_doc

PREPROCESS_FORMAT_VERSION = 1

#: Floor applied to standard deviations so constant columns stay dividable.
STD_FLOOR = 1e-6

#: The bundled ten-feature selection used by the default ("table1") mode.
CURATED_FEATURES = (
    "ct_dst_sport_ltm",
    "tcprtt",
    "dwin",
    "ct_src_dport_ltm",
    "ct_dst_src_ltm",
    "ct_dst_ltm",
    "smean",
    "dmean",
    "service",
    "proto",
)

#: Code reserved for category values never seen during fitting.
UNSEEN_CODE = 0


class PreprocessError(Exception):
    pass


@dataclass(frozen=True)
class EncoderMap:
    """Per-feature category codes, assigned in first-seen order from 1."""

    codes: Mapping[str, Mapping[str, int]]

    def code_for(self, feature: str, value: str) -> int:
        return self.codes.get(feature, {}).get(value, UNSEEN_CODE)


def fit_encoders(train: Sequence[FlowRecord], schema: FeatureSchema) -> EncoderMap:
    """Assign integer codes to every categorical value seen in training.

    Codes within one feature are contiguous from 1 in first-seen order;
    0 stays reserved for values unseen at fit time.
    """
    if not train:
        raise PreprocessError("cannot fit encoders on an empty training set")
    cat_cols = [(c.name, schema.index_of(c.name)) for c in schema.columns if c.kind == "categorical"]
    codes: dict[str, dict[str, int]] = {}
    for name, idx in cat_cols:
        table: dict[str, int] = {}
        for rec in train:
            v = rec.values[idx]
            if v not in table:
                table[v] = len(table) + 1
        codes[name] = table
    return EncoderMap(codes)


@dataclass(frozen=True)
class PcaModel:
    """Centered linear projection onto the top principal directions."""

    mean: np.ndarray  # (D,)
    projection: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) @ self.projection.T


def fit_pca(matrix: np.ndarray, k: int) -> PcaModel:
    """Fit the top-k principal directions of the sample covariance.

    Computed through an SVD of the centered data; eigenvalues use the
    sample (divide-by-N-1) convention. Rank-deficient inputs are fine:
    trailing eigenvalues may be zero.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise PreprocessError(f"expected a 2-d matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise PreprocessError("PCA needs at least 2 rows (covariance undefined for N=1)")
    if not 1 <= k <= d:
        raise PreprocessError(f"component count k={k} must be in [1, {d}]")

    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    explained = (s**2) / (n - 1)
    rows = vt[:k].copy()
    # Deterministic sign: make the largest-magnitude entry of each row positive.
    for i in range(rows.shape[0]):
        j = int(np.argmax(np.abs(rows[i])))
        if rows[i, j] < 0:
            rows[i] = -rows[i]
    return PcaModel(mean=mean, projection=rows, explained_variance=explained[:k].copy())


@dataclass(frozen=True)
class ZScoreParams:
    """Per-feature mean and floored population standard deviation."""

    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,), every entry >= STD_FLOOR

    def normalize(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.std


def fit_zscore(matrix: np.ndarray, *, floor: float = STD_FLOOR) -> ZScoreParams:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise PreprocessError(f"expected a non-empty 2-d matrix, got shape {x.shape}")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), floor)  # population (divide-by-N) convention
    return ZScoreParams(mean=mean, std=std)


@dataclass(frozen=True)
class PreprocessModel:
    """Fitted encode -> reduce -> normalize pipeline.

    Exactly one of ``selected`` (feature-name list mode) and ``pca`` is set.
    """

    schema: FeatureSchema
    encoder: EncoderMap
    selected: tuple[str, ...] | None
    pca: PcaModel | None
    zscore: ZScoreParams

    def __post_init__(self):
        if (self.selected is None) == (self.pca is None):
            raise PreprocessError("exactly one reduction mode must be configured")

    @property
    def output_dim(self) -> int:
        if self.selected is not None:
            return len(self.selected)
        return self.pca.projection.shape[0]

    @property
    def reduction_mode(self) -> str:
        return "select" if self.selected is not None else "pca"

    def apply(self, record: FlowRecord) -> np.ndarray:
        """Preprocess one record into a length-d vector."""
        return self.apply_records([record])[0]

    def apply_records(self, records: Sequence[FlowRecord]) -> np.ndarray:
        """Preprocess records into an (N, d) matrix."""
        if self.selected is not None:
            encoded = _encoded_matrix(records, self.schema, self.encoder, self.selected)
            reduced = encoded
        else:
            encoded = _encoded_matrix(records, self.schema, self.encoder, self.schema.feature_names())
            reduced = self.pca.transform(encoded)
        return self.zscore.normalize(reduced)

    def digest(self) -> str:
        """Content hash binding profiles to this exact fitted pipeline."""
        return digest_of(preprocess_to_doc(self))


def parse_reduction_mode(mode: str) -> tuple[str, int | None]:
    """Parse a reduction mode string: ``table1`` or ``pca:<k>``."""
    if mode == "table1":
        return "table1", None
    if mode.startswith("pca:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            raise PreprocessError(f"bad reduction mode {mode!r}: component count not an integer")
        if k < 1:
            raise PreprocessError(f"bad reduction mode {mode!r}: component count must be >= 1")
        return "pca", k
    raise PreprocessError(f"unknown reduction mode {mode!r} (expected 'table1' or 'pca:<k>')")


def fit_preprocess(
    train: Sequence[FlowRecord],
    schema: FeatureSchema,
    mode: str = "table1",
) -> PreprocessModel:
    """Fit the full pipeline on training records."""
    if not train:
        raise PreprocessError("cannot fit preprocessing on an empty training set")
    kind, k = parse_reduction_mode(mode)
    encoder = fit_encoders(train, schema)
    if kind == "table1":
        schema.validate_selection(CURATED_FEATURES)
        matrix = _encoded_matrix(train, schema, encoder, CURATED_FEATURES)
        zscore = fit_zscore(matrix)
        return PreprocessModel(schema, encoder, tuple(CURATED_FEATURES), None, zscore)
    all_features = schema.feature_names()
    matrix = _encoded_matrix(train, schema, encoder, all_features)
    pca = fit_pca(matrix, k)
    zscore = fit_zscore(pca.transform(matrix))
    return PreprocessModel(schema, encoder, None, pca, zscore)


def _encoded_matrix(
    records: Sequence[FlowRecord],
    schema: FeatureSchema,
    encoder: EncoderMap,
    features: Sequence[str],
) -> np.ndarray:
    """Build the numeric matrix for the named features (encode step)."""
    n = len(records)
    out = np.empty((n, len(features)), dtype=np.float64)
    for j, name in enumerate(features):
        idx = schema.index_of(name)
        kind = schema.columns[idx].kind
        if kind == "categorical":
            table = encoder.codes.get(name, {})
            out[:, j] = [table.get(rec.values[idx], UNSEEN_CODE) for rec in records]
        elif kind == "numeric":
            column = [rec.values[idx] for rec in records]
            try:
                values = np.asarray(column, dtype=np.float64)
            except ValueError:
                for rec in records:
                    try:
                        float(rec.values[idx])
                    except ValueError:
                        raise PreprocessError(
                            f"column {name!r}: non-numeric value {rec.values[idx]!r} "
                            f"in record from {rec.origin}"
                        ) from None
                raise
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                rec = records[bad[0]]
                raise PreprocessError(
                    f"column {name!r}: non-finite value {rec.values[idx]!r} "
                    f"in record from {rec.origin}"
                )
            out[:, j] = values
        else:
            raise PreprocessError(f"column {name!r} has kind {kind!r} and cannot be modeled")
    return out


def preprocess_to_doc(model: PreprocessModel) -> dict:
    if model.selected is not None:
        reduction = {"mode": "select", "features": list(model.selected)}
    else:
        reduction = {
            "mode": "pca",
            "mean": model.pca.mean.tolist(),
            "projection": model.pca.projection.tolist(),
            "explained_variance": model.pca.explained_variance.tolist(),
        }
    return {
        "version": PREPROCESS_FORMAT_VERSION,
        "schema": schema_to_doc(model.schema),
        "encoders": {k: dict(v) for k, v in model.encoder.codes.items()},
        "reduction": reduction,
        "zscore": {"mean": model.zscore.mean.tolist(), "std": model.zscore.std.tolist()},
    }


def preprocess_from_doc(doc: dict) -> PreprocessModel:
    if not isinstance(doc, dict) or doc.get("version") != PREPROCESS_FORMAT_VERSION:
        raise PreprocessError(f"unsupported preprocessing document version: {doc.get('version')!r}")
    try:
        schema = schema_from_doc(doc["schema"])
        encoder = EncoderMap({k: dict(v) for k, v in doc["encoders"].items()})
        red = doc["reduction"]
        if red["mode"] == "select":
            selected, pca = tuple(red["features"]), None
        elif red["mode"] == "pca":
            selected = None
            pca = PcaModel(
                mean=np.asarray(red["mean"], dtype=np.float64),
                projection=np.asarray(red["projection"], dtype=np.float64),
                explained_variance=np.asarray(red["explained_variance"], dtype=np.float64),
            )
        else:
            raise PreprocessError(f"unknown reduction mode {red['mode']!r}")
        zscore = ZScoreParams(
            mean=np.asarray(doc["zscore"]["mean"], dtype=np.float64),
            std=np.asarray(doc["zscore"]["std"], dtype=np.float64),
        )
    except (KeyError, TypeError) as exc:
        raise PreprocessError(f"malformed preprocessing document: {exc}") from exc
    return PreprocessModel(schema, encoder, selected, pca, zscore)


def save_preprocess(model: PreprocessModel, path) -> None:
    Path(path).write_text(pretty_dumps(preprocess_to_doc(model)), encoding="utf-8")


def load_preprocess(source) -> PreprocessModel:
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = str(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PreprocessError(f"preprocessing document is not valid JSON: {exc}") from exc
    return preprocess_from_doc(doc)
