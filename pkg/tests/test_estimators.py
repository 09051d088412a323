import numpy as np
import pytest

from conftest import relative_error
from core.errors import StateLayoutError
from core.flops import FlopCounter
from core.srf_core import LinearizedMeasurement
from core.state import NAV_BLOCK
from estimators import DenseEkfEngine, SrfEngine, SrifEngine, make_engine

ENGINES = ["ekf", "srif", "llt", "pqr", "potter", "carlson", "kaminski"]


@pytest.mark.parametrize("estimator, cls", [("ekf", DenseEkfEngine), ("srif", SrifEngine), ("llt", SrfEngine),
                                            ("carlson", SrfEngine)])
def test__make_engine(estimator, cls):
    engine = make_engine(estimator, "single")
    assert isinstance(engine, cls)
    assert engine.dtype == np.float32


@pytest.mark.parametrize("estimator, precision", [("ukf", "double"), ("llt", "quad")])
def test__make_engine_invalid(estimator, precision):
    with pytest.raises(ValueError):
        make_engine(estimator, precision)


class Test_engine_equivalence:
    @staticmethod
    def _script(engine, prior, rng):
        """Two propagate/clone/update cycles followed by a marginalization"""
        engine.initialize(prior.vector, prior.U)
        results = []
        for step in range(2):
            phi = np.eye(15) + 0.05 * rng.standard_normal((15, 15))
            w = 0.05 * np.eye(15) + 0.01 * np.triu(rng.standard_normal((15, 15)))
            nav = engine.vector.block(NAV_BLOCK).boxplus(0.01 * rng.standard_normal(15)).value
            engine.propagate(phi, w, nav)
            engine.clone(f"clone_{step}")
            n = engine.vector.dim
            m = 6
            meas = LinearizedMeasurement(rng.standard_normal(m), rng.standard_normal((m, n)), 0.5 * np.ones(m))
            results.append(engine.update(meas))
        engine.marginalize(["clone_0"])
        return results

    @pytest.mark.parametrize("estimator", ENGINES[1:])
    def test_matches_dense_ekf(self, estimator, nav_state):
        prior = nav_state(2)
        reference = make_engine("ekf")
        engine = make_engine(estimator)
        ref_results = self._script(reference, prior, np.random.default_rng(5))
        results = self._script(engine, prior, np.random.default_rng(5))

        assert all(r["success"] for r in ref_results + results)
        assert engine.vector.names == reference.vector.names == [NAV_BLOCK, "clone_1", "feat_0", "feat_1"]
        np.testing.assert_allclose(engine.vector.boxminus(reference.vector), np.zeros(engine.vector.dim),
                                   atol=1e-8)
        assert relative_error(engine.covariance(), reference.covariance()) < 1e-8

    def test_nav_covariance(self, nav_state):
        prior = nav_state(1)
        engine = make_engine("llt")
        engine.initialize(prior.vector, prior.U)
        np.testing.assert_array_almost_equal(engine.nav_covariance(), prior.covariance()[:15, :15], decimal=14)


class Test_update_result:
    @pytest.mark.parametrize("estimator", ENGINES)
    def test_failure_is_reported(self, estimator, nav_state):
        prior = nav_state(0)
        engine = make_engine(estimator)
        engine.initialize(prior.vector, prior.U)
        too_wide = LinearizedMeasurement(np.ones(2), np.ones((2, prior.dim + 3)), 1.0)
        result = engine.update(too_wide)
        assert result["success"] is False
        assert "error" in result
        assert engine.failed_updates == 1

    @pytest.mark.parametrize("estimator", ENGINES)
    def test_empty_update(self, estimator, nav_state):
        prior = nav_state(0)
        engine = make_engine(estimator)
        engine.initialize(prior.vector, prior.U)
        result = engine.update(LinearizedMeasurement.empty(prior.dim))
        assert result["success"] is True
        assert relative_error(engine.covariance(), prior.covariance()) < 1e-12

    def test_flops_reported(self, nav_state, random_measurement):
        prior = nav_state(1)
        engine = make_engine("llt")
        engine.initialize(prior.vector, prior.U)
        counter = FlopCounter()
        result = engine.update(random_measurement(prior.dim, 4), counter)
        assert result["flops"] == counter.total > 0.0
        assert result["k"] == prior.dim


class Test_gate:
    @pytest.mark.parametrize("estimator", ENGINES)
    def test_outlier(self, estimator, nav_state, rng):
        prior = nav_state(0)
        engine = make_engine(estimator)
        engine.initialize(prior.vector, prior.U)
        H = rng.standard_normal((2, prior.dim))
        assert engine.gate(LinearizedMeasurement(np.zeros(2), H, 1.0))
        assert not engine.gate(LinearizedMeasurement(np.array([1e4, 1e4]), H, 1.0))


def test__srif_single_clone_between_propagations(nav_state):
    prior = nav_state(0)
    engine = make_engine("srif")
    engine.initialize(prior.vector, prior.U)
    engine.clone("clone_0")
    with pytest.raises(StateLayoutError):
        engine.clone("clone_1")
