import io

import numpy as np
import pytest

from cfgen import (
    DatasetSchema,
    FeatureKind,
    FeatureSchema,
    InstanceSet,
    LinearModel,
    make_instance,
)


@pytest.fixture
def mixed_schema() -> DatasetSchema:
    """Continuous + ordinal + nominal features, one of them non-modifiable."""
    return DatasetSchema(
        features=(
            FeatureSchema("age", FeatureKind.CONTINUOUS, min=20.0, max=70.0),
            FeatureSchema(
                "education",
                FeatureKind.ORDINAL,
                levels=("school", "college", "masters", "phd"),
            ),
            FeatureSchema("hours", FeatureKind.CONTINUOUS, min=0.0, max=80.0),
            FeatureSchema("job", FeatureKind.NOMINAL, levels=("clerk", "trade", "tech")),
            FeatureSchema("origin", FeatureKind.NOMINAL, levels=("here", "there"), user_modifiable=False),
        ),
        target="label",
    )


@pytest.fixture
def plain2_schema() -> DatasetSchema:
    """Two continuous features already on the unit interval."""
    return DatasetSchema(
        features=(
            FeatureSchema("f0", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
            FeatureSchema("f1", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
        ),
        target="label",
    )


def separable_csv(n: int = 200, seed: int = 7, margin: float = 0.5) -> io.StringIO:
    """CSV for plain2_schema, linearly separable around f0 + f1 = 1: every
    point satisfies |f0 + f1 - 1| >= margin."""
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = ["f0,f1,label"]
    while len(rows) <= n:
        f0, f1 = rng.uniform(0.0, 1.0, size=2)
        score = f0 + f1 - 1.0
        if abs(score) < margin:
            continue
        rows.append(f"{f0:.6f},{f1:.6f},{1 if score > 0 else 0}")
    return io.StringIO("\n".join(rows) + "\n")


def instance_set(schema: DatasetSchema, originals: list[dict], labels: list[int]) -> InstanceSet:
    return InstanceSet(
        instances=tuple(make_instance(o, schema) for o in originals),
        labels=np.asarray(labels, dtype=int),
    )


def toy_model(weights, bias: float = 0.0) -> LinearModel:
    return LinearModel(weights=np.asarray(weights, dtype=float), bias=bias)
