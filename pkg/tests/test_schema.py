import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfgen import (
    DataError,
    DatasetSchema,
    FeatureKind,
    FeatureSchema,
    SchemaError,
    decode,
    encode,
    load_dataset,
    make_instance,
)
from cfgen.schema import DatasetStats, compute_stats, median_absolute_deviation

from conftest import instance_set


def csv_of(rows: list[str]) -> io.StringIO:
    return io.StringIO("\n".join(rows) + "\n")


class TestEncode:
    def test_continuous_endpoints(self, mixed_schema):
        lo = encode({"age": 20, "education": "school", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)
        hi = encode({"age": 70, "education": "school", "hours": 80, "job": "clerk", "origin": "here"}, mixed_schema)
        assert lo[0] == 0.0 and hi[0] == 1.0
        assert lo[2] == 0.0 and hi[2] == 1.0

    def test_ordinal_index_scaling(self, mixed_schema):
        vec = encode({"age": 20, "education": "college", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)
        assert vec[1] == pytest.approx(1 / 3)

    def test_nominal_one_hot(self, mixed_schema):
        vec = encode({"age": 20, "education": "school", "hours": 0, "job": "trade", "origin": "here"}, mixed_schema)
        assert vec[3:6].tolist() == [0.0, 1.0, 0.0]

    def test_encoded_in_unit_box(self, mixed_schema):
        vec = encode({"age": 44, "education": "phd", "hours": 33, "job": "tech", "origin": "there"}, mixed_schema)
        assert np.all(vec >= 0.0) and np.all(vec <= 1.0)

    def test_out_of_range_raises(self, mixed_schema):
        with pytest.raises(SchemaError, match="outside"):
            encode({"age": 19, "education": "school", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)

    def test_unknown_level_raises(self, mixed_schema):
        with pytest.raises(SchemaError, match="unknown level"):
            encode({"age": 25, "education": "kindergarten", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)


class TestDecode:
    def test_ordinal_nearest_index(self, mixed_schema):
        vec = encode({"age": 20, "education": "school", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)
        vec[1] = 0.34
        # oracle: nearest of the 4 level positions, lower index on ties
        candidates = [abs(0.34 - i / 3) for i in range(4)]
        best = min(range(4), key=lambda i: (candidates[i], i))
        assert best == 1
        assert decode(vec, mixed_schema)["education"] == "college"

    def test_ordinal_tie_breaks_low(self, mixed_schema):
        vec = encode({"age": 20, "education": "school", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)
        vec[1] = 0.5 / 3  # exactly between indices 0 and 1
        assert decode(vec, mixed_schema)["education"] == "school"

    def test_nominal_argmax(self, mixed_schema):
        vec = encode({"age": 20, "education": "school", "hours": 0, "job": "clerk", "origin": "here"}, mixed_schema)
        vec[3:6] = [0.2, 0.7, 0.1]
        assert decode(vec, mixed_schema)["job"] == "trade"

    def test_width_mismatch_raises(self, mixed_schema):
        with pytest.raises(SchemaError, match="width"):
            decode(np.zeros(3), mixed_schema)


@st.composite
def mixed_originals(draw):
    return {
        "age": draw(st.floats(min_value=20.0, max_value=70.0, allow_nan=False)),
        "education": draw(st.sampled_from(["school", "college", "masters", "phd"])),
        "hours": draw(st.floats(min_value=0.0, max_value=80.0, allow_nan=False)),
        "job": draw(st.sampled_from(["clerk", "trade", "tech"])),
        "origin": draw(st.sampled_from(["here", "there"])),
    }


@settings(max_examples=200)
@given(original=mixed_originals())
def test_roundtrip_decode_encode(original):
    schema = DatasetSchema(
        features=(
            FeatureSchema("age", FeatureKind.CONTINUOUS, min=20.0, max=70.0),
            FeatureSchema("education", FeatureKind.ORDINAL, levels=("school", "college", "masters", "phd")),
            FeatureSchema("hours", FeatureKind.CONTINUOUS, min=0.0, max=80.0),
            FeatureSchema("job", FeatureKind.NOMINAL, levels=("clerk", "trade", "tech")),
            FeatureSchema("origin", FeatureKind.NOMINAL, levels=("here", "there")),
        ),
        target="label",
    )
    back = decode(encode(original, schema), schema)
    assert back["education"] == original["education"]
    assert back["job"] == original["job"]
    assert back["origin"] == original["origin"]
    # continuous round-trips up to float arithmetic of the affine rescale
    assert math.isclose(back["age"], original["age"], rel_tol=1e-12, abs_tol=1e-9)
    assert math.isclose(back["hours"], original["hours"], rel_tol=1e-12, abs_tol=1e-9)


class TestSchemaValidation:
    def test_continuous_needs_range(self):
        with pytest.raises(SchemaError):
            FeatureSchema("x", FeatureKind.CONTINUOUS)

    def test_min_max_ordering(self):
        with pytest.raises(SchemaError):
            FeatureSchema("x", FeatureKind.CONTINUOUS, min=5.0, max=5.0)

    def test_categorical_needs_levels(self):
        with pytest.raises(SchemaError):
            FeatureSchema("x", FeatureKind.NOMINAL)

    def test_ordinal_needs_two_levels(self):
        with pytest.raises(SchemaError):
            FeatureSchema("x", FeatureKind.ORDINAL, levels=("only",))

    def test_duplicate_feature_names(self):
        f = FeatureSchema("x", FeatureKind.CONTINUOUS, min=0.0, max=1.0)
        with pytest.raises(SchemaError, match="duplicate"):
            DatasetSchema(features=(f, f), target="y")

    def test_json_roundtrip(self, mixed_schema, tmp_path):
        path = tmp_path / "schema.json"
        mixed_schema.save(path)
        loaded = DatasetSchema.from_json_dict(json.loads(path.read_text()))
        assert loaded == mixed_schema
        assert loaded.fingerprint() == mixed_schema.fingerprint()

    def test_fingerprint_changes_with_contract(self, mixed_schema):
        other = DatasetSchema(
            features=mixed_schema.features[:-1], target=mixed_schema.target
        )
        assert other.fingerprint() != mixed_schema.fingerprint()


class TestLoadDataset:
    def header(self):
        return "age,education,hours,job,origin,label"

    def row(self, i: int, label: int = 0) -> str:
        return f"{20 + (i % 50)},college,{i % 80},clerk,here,{label}"

    def test_split_arithmetic(self, mixed_schema):
        rows = [self.header()] + [self.row(i, i % 2) for i in range(100)]
        train, test, stats = load_dataset(csv_of(rows), mixed_schema, split_fraction=0.8, seed=3)
        assert len(train) == 80 and len(test) == 20
        assert stats.n_train == 80 and stats.n_test == 20

    def test_split_is_partition(self, mixed_schema):
        rows = [self.header()] + [self.row(i, i % 2) for i in range(57)]
        train, test, _ = load_dataset(csv_of(rows), mixed_schema, split_fraction=0.6, seed=11)
        seen = [tuple(sorted(inst.original.items())) for inst in train.instances + test.instances]
        assert len(seen) == 57
        all_rows = [self.row(i, i % 2) for i in range(57)]
        assert len(train) + len(test) == len(all_rows)

    def test_split_deterministic(self, mixed_schema):
        rows = [self.header()] + [self.row(i, i % 2) for i in range(40)]
        a_train, a_test, _ = load_dataset(csv_of(rows), mixed_schema, seed=5)
        b_train, b_test, _ = load_dataset(csv_of(rows), mixed_schema, seed=5)
        assert [i.original for i in a_train.instances] == [i.original for i in b_train.instances]
        assert [i.original for i in a_test.instances] == [i.original for i in b_test.instances]

    def test_malformed_row_names_row_and_column(self, mixed_schema):
        rows = [self.header(), self.row(0, 1), "20,college,not_a_number,clerk,here,0"]
        with pytest.raises(DataError, match=r"row 1.*hours"):
            load_dataset(csv_of(rows), mixed_schema)

    def test_unknown_level_names_level(self, mixed_schema):
        rows = [self.header(), "20,college,10,astronaut,here,0"]
        with pytest.raises(DataError, match="astronaut"):
            load_dataset(csv_of(rows), mixed_schema)

    def test_bad_label_rejected(self, mixed_schema):
        rows = [self.header(), "20,college,10,clerk,here,2"]
        with pytest.raises(DataError, match="target"):
            load_dataset(csv_of(rows), mixed_schema)

    def test_bad_split_fraction(self, mixed_schema):
        rows = [self.header(), self.row(0, 1)]
        with pytest.raises(ValueError, match="split_fraction"):
            load_dataset(csv_of(rows), mixed_schema, split_fraction=1.0)

    def test_missing_header_column(self, mixed_schema):
        rows = ["age,education,hours,job,label", "20,college,10,clerk,0"]
        with pytest.raises(DataError, match="origin"):
            load_dataset(csv_of(rows), mixed_schema)


class TestStats:
    def test_mad_matches_sort_oracle(self, mixed_schema):
        rng = np.random.Generator(np.random.PCG64(4))
        ages = rng.uniform(20, 70, size=31)
        originals = [
            {"age": a, "education": "college", "hours": 10.0, "job": "clerk", "origin": "here"}
            for a in ages
        ]
        train = instance_set(mixed_schema, originals, [i % 2 for i in range(31)])
        stats = compute_stats(train, mixed_schema)

        def sort_median(vals):
            ordered = sorted(vals)
            n = len(ordered)
            mid = n // 2
            return ordered[mid] if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2

        encoded_ages = [(a - 20) / 50 for a in ages]
        med = sort_median(encoded_ages)
        oracle = sort_median([abs(v - med) for v in encoded_ages])
        assert stats.mad["age"] == pytest.approx(oracle, rel=1e-12)

    def test_mad_helper_even_count(self):
        values = np.asarray([1.0, 2.0, 3.0, 10.0])
        med = 2.5
        oracle = sorted(abs(v - med) for v in values)
        expected = (oracle[1] + oracle[2]) / 2
        assert median_absolute_deviation(values) == pytest.approx(expected)

    def test_zero_mad_falls_back_to_std(self, mixed_schema):
        # majority identical ages -> MAD 0, but std > 0
        ages = [40.0] * 10 + [60.0, 65.0]
        originals = [
            {"age": a, "education": "college", "hours": 10.0, "job": "clerk", "origin": "here"}
            for a in ages
        ]
        train = instance_set(mixed_schema, originals, [i % 2 for i in range(len(ages))])
        stats = compute_stats(train, mixed_schema)
        encoded = [(a - 20) / 50 for a in ages]
        assert stats.mad["age"] == pytest.approx(float(np.std(encoded)))
        assert stats.mad["age"] > 0.0

    def test_constant_feature_falls_back_to_one(self, mixed_schema):
        originals = [
            {"age": 40.0, "education": "college", "hours": h, "job": "clerk", "origin": "here"}
            for h in (10.0, 20.0, 30.0, 40.0)
        ]
        train = instance_set(mixed_schema, originals, [0, 1, 0, 1])
        stats = compute_stats(train, mixed_schema)
        assert stats.mad["age"] == 1.0
        assert stats.std["age"] == 0.0

    def test_stats_only_cover_directed_features(self, mixed_schema):
        originals = [
            {"age": 30.0, "education": "college", "hours": 10.0, "job": "clerk", "origin": "here"},
            {"age": 50.0, "education": "phd", "hours": 60.0, "job": "tech", "origin": "there"},
        ]
        train = instance_set(mixed_schema, originals, [0, 1])
        stats = compute_stats(train, mixed_schema)
        assert set(stats.mad) == {"age", "education", "hours"}

    def test_stats_json_roundtrip(self, tmp_path):
        stats = DatasetStats(mad={"a": 0.5}, std={"a": 0.4}, n_train=8, n_test=2)
        path = tmp_path / "stats.json"
        stats.save(path)
        assert DatasetStats.load(path) == stats
