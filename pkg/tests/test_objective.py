import numpy as np
import pytest

from cfgen import (
    ContinuousMetric,
    DatasetSchema,
    FeatureKind,
    FeatureSchema,
    ObjectiveError,
    PerturbationWeights,
    ProximityConfig,
    combined_distance,
    distance_categorical,
    distance_categorical_relaxed,
    distance_continuous,
    diversity,
    hinge_loss,
    objective_and_gradient,
)
from cfgen.objective import _kernel_matrix
from cfgen.schema import DatasetStats

from conftest import toy_model


@pytest.fixture
def pair_schema():
    return DatasetSchema(
        features=(
            FeatureSchema("u", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
            FeatureSchema("v", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
        ),
        target="y",
    )


@pytest.fixture
def cat_schema():
    return DatasetSchema(
        features=(
            FeatureSchema("a", FeatureKind.NOMINAL, levels=("A", "B", "C")),
            FeatureSchema("b", FeatureKind.NOMINAL, levels=("X", "Y")),
        ),
        target="y",
    )


def unit_weights():
    return PerturbationWeights.unit()


class TestDistanceContinuous:
    def test_identity(self, pair_schema):
        layout = pair_schema.layout()
        x = np.asarray([0.4, 0.6])
        for metric in ContinuousMetric:
            config = ProximityConfig.unit(metric)
            assert distance_continuous(x, x, unit_weights(), config, layout) == 0.0

    def test_mahalanobis_example(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit(ContinuousMetric.MAHALANOBIS_SQ)
        gamma = PerturbationWeights(gamma={"u": 1.0, "v": 2.0})
        c = np.asarray([0.5, 0.0])
        x = np.asarray([0.0, 0.5])
        assert distance_continuous(c, x, gamma, config, layout) == pytest.approx(0.75)

    def test_mad_manhattan_example(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig(
            continuous_metric=ContinuousMetric.MAD_MANHATTAN,
            normalizer={"u": 0.2, "v": 0.5},
        )
        c = np.asarray([0.1, 0.0])
        x = np.asarray([0.0, 0.1])
        # scalar-loop oracle
        gammas, deltas, mads = [1.0, 1.0], [0.1, -0.1], [0.2, 0.5]
        oracle = sum(g * abs(d) / m for g, d, m in zip(gammas, deltas, mads))
        assert oracle == pytest.approx(0.7)
        value = distance_continuous(c, x, unit_weights(), config, layout)
        assert value == pytest.approx(oracle)

    def test_symmetry_and_nonnegativity(self, pair_schema):
        layout = pair_schema.layout()
        rng = np.random.Generator(np.random.PCG64(0))
        for metric in ContinuousMetric:
            config = ProximityConfig.unit(metric)
            for _ in range(25):
                a, b = rng.uniform(0, 1, size=(2, 2))
                gamma = PerturbationWeights(gamma={"u": rng.uniform(0.5, 5), "v": rng.uniform(0.5, 5)})
                d_ab = distance_continuous(a, b, gamma, config, layout)
                d_ba = distance_continuous(b, a, gamma, config, layout)
                assert d_ab == pytest.approx(d_ba)
                assert d_ab >= 0.0

    def test_monotone_in_gamma(self, pair_schema):
        layout = pair_schema.layout()
        rng = np.random.Generator(np.random.PCG64(1))
        for metric in ContinuousMetric:
            config = ProximityConfig.unit(metric)
            for _ in range(25):
                a, b = rng.uniform(0, 1, size=(2, 2))
                low = PerturbationWeights(gamma={"u": 1.0, "v": 2.0})
                high = PerturbationWeights(gamma={"u": 1.5, "v": 2.0})
                assert distance_continuous(a, b, high, config, layout) >= distance_continuous(
                    a, b, low, config, layout
                )

    def test_normalizer_from_stats(self):
        stats = DatasetStats(mad={"u": 0.25}, std={"u": 0.0}, n_train=4, n_test=0)
        mad_cfg = ProximityConfig.from_stats(stats, ContinuousMetric.MAD_MANHATTAN)
        assert mad_cfg.normalizer["u"] == 0.25
        sq_cfg = ProximityConfig.from_stats(stats, ContinuousMetric.MAHALANOBIS_SQ)
        assert sq_cfg.normalizer["u"] == 1.0  # zero std falls back to 1

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ProximityConfig(normalizer={"u": 0.0})
        with pytest.raises(ValueError):
            PerturbationWeights(gamma={"u": -1.0})


class TestDistanceCategorical:
    def test_identity(self, cat_schema):
        layout = cat_schema.layout()
        x = np.asarray([1.0, 0.0, 0.0, 0.0, 1.0])
        assert distance_categorical(x, x, unit_weights(), layout) == 0.0

    def test_single_change(self, cat_schema):
        layout = cat_schema.layout()
        gamma = PerturbationWeights(gamma={"a": 3.0, "b": 1.0})
        x = np.asarray([1.0, 0.0, 0.0, 0.0, 1.0])  # a=A, b=Y
        c = np.asarray([1.0, 0.0, 0.0, 1.0, 0.0])  # a=A, b=X
        assert distance_categorical(c, x, gamma, layout) == pytest.approx(1.0)

    def test_both_changed(self, cat_schema):
        layout = cat_schema.layout()
        gamma = PerturbationWeights(gamma={"a": 3.0, "b": 1.0})
        x = np.asarray([1.0, 0.0, 0.0, 0.0, 1.0])
        c = np.asarray([0.0, 1.0, 0.0, 1.0, 0.0])
        assert distance_categorical(c, x, gamma, layout) == pytest.approx(4.0)

    def test_relaxed_matches_exact_at_vertices(self, cat_schema):
        layout = cat_schema.layout()
        rng = np.random.Generator(np.random.PCG64(3))
        gamma = PerturbationWeights(gamma={"a": 2.0, "b": 0.5})
        for _ in range(20):
            a_hot = rng.integers(0, 3)
            b_hot = rng.integers(0, 2)
            c = np.zeros(5)
            c[a_hot] = 1.0
            c[3 + b_hot] = 1.0
            x = np.zeros(5)
            x[rng.integers(0, 3)] = 1.0
            x[3 + rng.integers(0, 2)] = 1.0
            assert distance_categorical_relaxed(c, x, gamma, layout) == pytest.approx(
                distance_categorical(c, x, gamma, layout)
            )


class TestHinge:
    def test_margin_satisfied(self):
        assert hinge_loss(2.0, desired_class=1) == 0.0

    def test_boundary(self):
        assert hinge_loss(0.0, desired_class=0) == 1.0

    def test_direct_formula(self):
        assert hinge_loss(-0.5, desired_class=1) == pytest.approx(1.5)

    def test_zero_iff_margin(self):
        for logit in (-3.0, -1.0, 0.0, 0.99, 1.0, 2.5):
            loss = hinge_loss(logit, desired_class=1)
            assert (loss == 0.0) == (logit >= 1.0)


class TestDiversity:
    def test_singleton(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        val = diversity(np.asarray([[0.3, 0.7]]), unit_weights(), config, layout, ridge=0.0)
        assert val == 1.0

    def test_duplicate_pair_is_singular(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        cfs = np.asarray([[0.3, 0.7], [0.3, 0.7]])
        assert diversity(cfs, unit_weights(), config, layout, ridge=0.0) == pytest.approx(0.0)

    def test_unit_distance_pair(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        cfs = np.asarray([[0.0, 0.0], [1.0, 0.0]])  # manhattan distance 1
        assert diversity(cfs, unit_weights(), config, layout, ridge=0.0) == pytest.approx(0.75)

    def test_kernel_symmetric_unit_diagonal(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        rng = np.random.Generator(np.random.PCG64(5))
        cfs = rng.uniform(0, 1, size=(4, 2))
        km = _kernel_matrix(cfs, unit_weights(), config, layout, ridge=0.0)
        assert np.array_equal(km, km.T)
        assert np.all(np.diag(km) == 1.0)
        assert np.linalg.det(km) <= 1.0 + 1e-12


class TestObjectiveAndGradient:
    def test_all_terms_vanish(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        model = toy_model([5.0, 0.0], bias=0.0)
        cfs = np.asarray([[0.9, 0.2], [0.8, 0.3]])  # logits 4.5, 4.0 beyond the margin
        value, grads = objective_and_gradient(
            cfs,
            np.asarray([0.5, 0.5]),
            model,
            unit_weights(),
            config,
            layout,
            proximity_weight=0.0,
            diversity_weight=0.0,
            desired_class=1,
        )
        assert value == 0.0
        assert np.all(grads == 0.0)

    def test_singleton_reduces_to_hinge_plus_proximity(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        model = toy_model([1.0, -2.0], bias=0.1)
        x = np.asarray([0.5, 0.5])
        c = np.asarray([[0.4, 0.8]])
        value, grads = objective_and_gradient(
            c, x, model, unit_weights(), config, layout,
            proximity_weight=2.0, diversity_weight=0.0, desired_class=1,
        )
        logit = model.logit(c[0])
        expected_value = max(0.0, 1.0 - logit) + 2.0 * combined_distance(
            c[0], x, unit_weights(), config, layout, relaxed=True
        )
        assert value == pytest.approx(expected_value)
        expected_grad = -model.weights + 2.0 * np.sign(c[0] - x)
        assert grads[0] == pytest.approx(expected_grad)

    @pytest.mark.parametrize("metric", list(ContinuousMetric))
    def test_gradient_matches_finite_differences(self, metric):
        schema = DatasetSchema(
            features=(
                FeatureSchema("p", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
                FeatureSchema("q", FeatureKind.CONTINUOUS, min=0.0, max=1.0),
                FeatureSchema("r", FeatureKind.NOMINAL, levels=("m", "n")),
            ),
            target="y",
        )
        layout = schema.layout()
        rng = np.random.Generator(np.random.PCG64(17))
        config = ProximityConfig(continuous_metric=metric, normalizer={"p": 0.3, "q": 0.8})
        h = 1e-5
        checked = 0
        while checked < 10:
            model = toy_model(rng.normal(size=4), bias=float(rng.normal()))
            x = rng.uniform(0.1, 0.9, size=4)
            cfs = rng.uniform(0.1, 0.9, size=(2, 4))
            gamma = PerturbationWeights(
                gamma={"p": rng.uniform(1, 5), "q": rng.uniform(1, 5), "r": rng.uniform(1, 5)}
            )
            # keep away from hinge and absolute-value kinks
            margins = [abs(1.0 - model.logit(c)) for c in cfs]
            gaps = [np.min(np.abs(c - x)) for c in cfs] + [np.min(np.abs(cfs[0] - cfs[1]))]
            if min(margins) < 1e-3 or min(gaps) < 1e-3:
                continue
            value, grads = objective_and_gradient(
                cfs, x, model, gamma, config, layout, desired_class=1
            )

            def value_at(flat):
                v, _ = objective_and_gradient(
                    flat.reshape(cfs.shape), x, model, gamma, config, layout, desired_class=1
                )
                return v

            flat = cfs.ravel()
            fd = np.empty_like(flat)
            for i in range(flat.size):
                up, down = flat.copy(), flat.copy()
                up[i] += h
                down[i] -= h
                fd[i] = (value_at(up) - value_at(down)) / (2 * h)
            rel = np.linalg.norm(grads.ravel() - fd) / max(np.linalg.norm(fd), 1e-10)
            assert rel < 1e-4
            checked += 1

    def test_singular_kernel_beyond_ridge_raises(self, pair_schema):
        layout = pair_schema.layout()
        config = ProximityConfig.unit()
        model = toy_model([1.0, 1.0])
        cfs = np.asarray([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ObjectiveError, match="ill-conditioned"):
            objective_and_gradient(
                cfs, np.asarray([0.1, 0.1]), model, unit_weights(), config, layout,
                desired_class=1, ridge=0.0,
            )
