"""Feature schemas, tabular dataset loading, and original/encoded space conversion.

The encoded model space is a dense float vector: continuous features are
min-max scaled to [0, 1], ordinal categoricals become their level index
scaled to [0, 1], and nominal categoricals are one-hot blocks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "FeatureKind",
    "FeatureSchema",
    "DatasetSchema",
    "EncodedLayout",
    "Instance",
    "InstanceSet",
    "DatasetStats",
    "SchemaError",
    "DataError",
    "encode",
    "decode",
    "make_instance",
    "load_dataset",
    "load_schema",
    "median_absolute_deviation",
]


class SchemaError(ValueError):
    """Raised for schema definitions or values that do not fit the schema."""


class DataError(ValueError):
    """Raised for malformed dataset rows; messages name the row and column."""


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    ORDINAL = "ordinal_categorical"
    NOMINAL = "nominal_categorical"


@dataclass(frozen=True)
class FeatureSchema:
    """Metadata for a single feature.

    ``levels`` are required for categorical kinds and must be listed in their
    semantic order for ordinals (e.g. employment seniority). ``min``/``max``
    bound continuous features in original units.
    """

    name: str
    kind: FeatureKind
    levels: tuple[str, ...] = ()
    min: float | None = None
    max: float | None = None
    user_modifiable: bool = True

    def __post_init__(self) -> None:
        if self.kind is FeatureKind.CONTINUOUS:
            if self.levels:
                raise SchemaError(f"continuous feature {self.name!r} must not define levels")
            if self.min is None or self.max is None or not self.min < self.max:
                raise SchemaError(f"continuous feature {self.name!r} needs min < max")
        else:
            if not self.levels:
                raise SchemaError(f"categorical feature {self.name!r} needs levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"feature {self.name!r} has duplicate levels")
            if self.kind is FeatureKind.ORDINAL and len(self.levels) < 2:
                raise SchemaError(f"ordinal feature {self.name!r} needs at least 2 levels")

    @property
    def is_directed(self) -> bool:
        """True when the feature has a defined direction of change."""
        return self.kind in (FeatureKind.CONTINUOUS, FeatureKind.ORDINAL)

    @property
    def encoded_width(self) -> int:
        return len(self.levels) if self.kind is FeatureKind.NOMINAL else 1

    def level_index(self, value: str) -> int:
        try:
            return self.levels.index(value)
        except ValueError:
            raise SchemaError(
                f"unknown level {value!r} for feature {self.name!r}"
            ) from None


@dataclass(frozen=True)
class EncodedLayout:
    """Index bookkeeping for the encoded vector of a schema."""

    width: int
    offsets: dict[str, int]
    directed_names: tuple[str, ...]
    directed_indices: np.ndarray
    nominal_names: tuple[str, ...]
    nominal_blocks: dict[str, tuple[int, int]]

    def block(self, name: str) -> tuple[int, int]:
        return self.nominal_blocks[name]


@dataclass(frozen=True)
class DatasetSchema:
    """Ordered feature list plus the name of the binary target column."""

    features: tuple[FeatureSchema, ...]
    target: str
    notes: str = ""

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")
        if self.target in names:
            raise SchemaError("target column must not be listed as a feature")

    def feature(self, name: str) -> FeatureSchema:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def layout(self) -> EncodedLayout:
        offsets: dict[str, int] = {}
        directed: list[str] = []
        directed_idx: list[int] = []
        nominal: list[str] = []
        blocks: dict[str, tuple[int, int]] = {}
        pos = 0
        for f in self.features:
            offsets[f.name] = pos
            if f.is_directed:
                directed.append(f.name)
                directed_idx.append(pos)
            else:
                nominal.append(f.name)
                blocks[f.name] = (pos, pos + f.encoded_width)
            pos += f.encoded_width
        return EncodedLayout(
            width=pos,
            offsets=offsets,
            directed_names=tuple(directed),
            directed_indices=np.asarray(directed_idx, dtype=np.intp),
            nominal_names=tuple(nominal),
            nominal_blocks=blocks,
        )

    def to_json_dict(self) -> dict:
        feats = []
        for f in self.features:
            d: dict = {"name": f.name, "kind": f.kind.value, "user_modifiable": f.user_modifiable}
            if f.kind is FeatureKind.CONTINUOUS:
                d["min"] = f.min
                d["max"] = f.max
            else:
                d["levels"] = list(f.levels)
            feats.append(d)
        out = {"features": feats, "target": self.target}
        if self.notes:
            out["notes"] = self.notes
        return out

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "DatasetSchema":
        try:
            raw_features = doc["features"]
            target = doc["target"]
        except KeyError as exc:
            raise SchemaError(f"schema document missing key {exc}") from None
        feats = []
        for raw in raw_features:
            feats.append(
                FeatureSchema(
                    name=raw["name"],
                    kind=FeatureKind(raw["kind"]),
                    levels=tuple(raw.get("levels", ())),
                    min=raw.get("min"),
                    max=raw.get("max"),
                    user_modifiable=bool(raw.get("user_modifiable", True)),
                )
            )
        return cls(features=tuple(feats), target=target, notes=doc.get("notes", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")

    def fingerprint(self) -> str:
        """Stable digest of the feature contract, used to pin persisted models."""
        payload = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_schema(path: str | Path) -> DatasetSchema:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetSchema.from_json_dict(doc)


@dataclass(frozen=True)
class Instance:
    """A data point in original units together with its encoded vector."""

    original: dict[str, float | str]
    encoded: np.ndarray


def encode(original: Mapping[str, float | str], schema: DatasetSchema) -> np.ndarray:
    """Encode an original-space instance into the dense model-space vector.

    Continuous values map to (v - min) / (max - min), ordinals to
    level_index / (n_levels - 1), nominals to a one-hot block. Values outside
    a continuous feature's [min, max] raise: ingestion never clamps silently.
    """
    vec = np.zeros(sum(f.encoded_width for f in schema.features), dtype=float)
    pos = 0
    for f in schema.features:
        if f.name not in original:
            raise SchemaError(f"instance missing feature {f.name!r}")
        value = original[f.name]
        if f.kind is FeatureKind.CONTINUOUS:
            v = float(value)  # type: ignore[arg-type]
            if not (f.min <= v <= f.max):  # type: ignore[operator]
                raise SchemaError(
                    f"value {v} outside [{f.min}, {f.max}] for feature {f.name!r}"
                )
            vec[pos] = (v - f.min) / (f.max - f.min)  # type: ignore[operator]
        elif f.kind is FeatureKind.ORDINAL:
            idx = f.level_index(str(value))
            vec[pos] = idx / (len(f.levels) - 1)
        else:
            idx = f.level_index(str(value))
            vec[pos + idx] = 1.0
        pos += f.encoded_width
    return vec


def decode(vector: np.ndarray, schema: DatasetSchema) -> dict[str, float | str]:
    """Decode an encoded vector back to original units.

    Total on well-shaped vectors: continuous coordinates are inverse-scaled,
    ordinals round to the nearest level index (ties to the lower index),
    nominal blocks decode by argmax (ties to the lowest level index).
    """
    width = sum(f.encoded_width for f in schema.features)
    if vector.shape != (width,):
        raise SchemaError(f"expected encoded width {width}, got shape {vector.shape}")
    out: dict[str, float | str] = {}
    pos = 0
    for f in schema.features:
        if f.kind is FeatureKind.CONTINUOUS:
            out[f.name] = f.min + float(vector[pos]) * (f.max - f.min)  # type: ignore[operator]
        elif f.kind is FeatureKind.ORDINAL:
            n = len(f.levels)
            t = float(vector[pos]) * (n - 1)
            # nearest index; equidistant values resolve to the lower index
            idx = min(n - 1, max(0, math.ceil(t - 0.5)))
            out[f.name] = f.levels[idx]
        else:
            block = vector[pos : pos + f.encoded_width]
            out[f.name] = f.levels[int(np.argmax(block))]
        pos += f.encoded_width
    return out


def make_instance(original: Mapping[str, float | str], schema: DatasetSchema) -> Instance:
    return Instance(original=dict(original), encoded=encode(original, schema))


@dataclass(frozen=True)
class InstanceSet:
    """Instances plus their 0/1 labels; rows stay aligned by position."""

    instances: tuple[Instance, ...]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def encoded_matrix(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, 0))
        return np.stack([inst.encoded for inst in self.instances])


def median_absolute_deviation(values: np.ndarray) -> float:
    """MAD: median of absolute deviations from the median."""
    med = float(np.median(values))
    return float(np.median(np.abs(values - med)))


@dataclass(frozen=True)
class DatasetStats:
    """Per-feature spread statistics computed on the training split only.

    ``mad`` and ``std`` cover the directed (continuous + ordinal) features on
    the encoded scale. Stored MAD values have the zero fallback applied
    (MAD of 0 falls back to std, then to 1.0), so they are strictly positive.
    """

    mad: dict[str, float]
    std: dict[str, float]
    n_train: int
    n_test: int

    def to_json_dict(self) -> dict:
        return {
            "features": {
                name: {"mad": self.mad[name], "std": self.std[name]} for name in self.mad
            },
            "n_train": self.n_train,
            "n_test": self.n_test,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "DatasetStats":
        feats = doc["features"]
        return cls(
            mad={name: float(v["mad"]) for name, v in feats.items()},
            std={name: float(v["std"]) for name, v in feats.items()},
            n_train=int(doc.get("n_train", 0)),
            n_test=int(doc.get("n_test", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetStats":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_stats(train: InstanceSet, schema: DatasetSchema, n_test: int = 0) -> DatasetStats:
    layout = schema.layout()
    matrix = train.encoded_matrix
    mad: dict[str, float] = {}
    std: dict[str, float] = {}
    for name, col in zip(layout.directed_names, layout.directed_indices):
        values = matrix[:, col]
        raw_std = float(np.std(values))
        raw_mad = median_absolute_deviation(values)
        if raw_mad == 0.0:
            raw_mad = raw_std if raw_std > 0.0 else 1.0
        mad[name] = raw_mad
        std[name] = raw_std
    return DatasetStats(mad=mad, std=std, n_train=len(train), n_test=n_test)


def _parse_row(
    row: dict[str, str], row_index: int, schema: DatasetSchema
) -> tuple[dict[str, float | str], int]:
    original: dict[str, float | str] = {}
    for f in schema.features:
        raw = row.get(f.name)
        if raw is None or raw == "":
            raise DataError(f"row {row_index}: missing value for column {f.name!r}")
        if f.kind is FeatureKind.CONTINUOUS:
            try:
                value: float | str = float(raw)
            except ValueError:
                raise DataError(
                    f"row {row_index}: column {f.name!r} value {raw!r} is not numeric"
                ) from None
        else:
            if raw not in f.levels:
                raise DataError(
                    f"row {row_index}: column {f.name!r} has unknown level {raw!r}"
                )
            value = raw
        original[f.name] = value
    raw_label = row.get(schema.target)
    if raw_label is None:
        raise DataError(f"row {row_index}: missing target column {schema.target!r}")
    if raw_label not in ("0", "1"):
        raise DataError(
            f"row {row_index}: target {schema.target!r} must be 0 or 1, got {raw_label!r}"
        )
    return original, int(raw_label)


def load_dataset(
    csv_source: str | Path | io.TextIOBase,
    schema: DatasetSchema,
    split_fraction: float = 0.8,
    seed: int = 0,
) -> tuple[InstanceSet, InstanceSet, DatasetStats]:
    """Load a CSV, split it into train/test, and compute training statistics.

    The CSV needs a header row, comma separators, and UTF-8 text. The split is
    a deterministic seeded shuffle; statistics are computed on the training
    split only.

    Raises:
        DataError: malformed rows, naming the row index and offending column.
        SchemaError: values outside a continuous feature's declared range.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie strictly between 0 and 1")
    if isinstance(csv_source, (str, Path)):
        handle: io.TextIOBase = open(csv_source, "r", encoding="utf-8", newline="")
        close = True
    else:
        handle, close = csv_source, False
    try:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError("empty CSV: header row required")
        missing = [
            name
            for name in (*schema.feature_names, schema.target)
            if name not in reader.fieldnames
        ]
        if missing:
            raise DataError(f"CSV header missing columns: {missing}")
        instances: list[Instance] = []
        labels: list[int] = []
        for row_index, row in enumerate(reader):
            try:
                original, label = _parse_row(row, row_index, schema)
            except SchemaError as exc:
                raise DataError(f"row {row_index}: {exc}") from None
            instances.append(make_instance(original, schema))
            labels.append(label)
    finally:
        if close:
            handle.close()

    n = len(instances)
    if n == 0:
        raise DataError("dataset has no rows")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    n_train = int(round(split_fraction * n))
    train_idx, test_idx = order[:n_train], order[n_train:]
    label_arr = np.asarray(labels, dtype=int)
    train = InstanceSet(
        instances=tuple(instances[i] for i in train_idx), labels=label_arr[train_idx]
    )
    test = InstanceSet(
        instances=tuple(instances[i] for i in test_idx), labels=label_arr[test_idx]
    )
    stats = compute_stats(train, schema, n_test=len(test))
    return train, test, stats
