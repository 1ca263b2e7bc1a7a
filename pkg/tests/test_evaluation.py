import numpy as np
import pytest
from scipy import stats

from cfardet import detectors
from cfardet.evaluation import (PerformanceSurface, auc, calibrate_threshold, cfar_deviation, chi2_sf,
                                chi2_threshold, estimate_surface, partial_auc_worst_case, read_csv, roc,
                                write_reports)
from cfardet.model_sim import DCModel
from cfardet.rng import stream


def surface_of(pairs):
    s = PerformanceSurface()
    for nid, (h0, h1) in pairs.items():
        s.add(nid, h0, h1)
    return s


@pytest.mark.parametrize("ties", [False, True])
def test_auc_matches_mann_whitney(ties):
    rng = stream(0)
    h0, h1 = rng.normal(size=300), rng.normal(0.7, 1.0, size=250)
    if ties:
        h0, h1 = np.round(h0, 1), np.round(h1, 1)
    u = stats.mannwhitneyu(h1, h0).statistic
    curve = roc(surface_of({"a": (h0, h1)}), "a")
    assert auc(curve) == pytest.approx(u / (h0.size * h1.size), abs=1e-12)


def test_roc_endpoints_and_monotone():
    rng = stream(1)
    curve = roc(surface_of({"a": (rng.normal(size=50), rng.normal(size=60))}), "a")
    assert tuple(curve[0]) == (0.0, 0.0) and tuple(curve[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve, axis=0) >= 0)


def test_constant_detector_has_half_auc():
    curve = roc(surface_of({"a": (np.zeros(10), np.zeros(10))}), "a")
    assert auc(curve) == 0.5


def test_random_detector_auc_near_half():
    rng = stream(2)
    n = 20000
    value = auc(roc(surface_of({"a": (rng.random(n), rng.random(n))}), "a"))
    # sd of the Mann-Whitney AUC under the null is sqrt((2n+1)/(12 n^2))
    assert abs(value - 0.5) < 4 * np.sqrt((2 * n + 1) / (12 * n * n))


def test_perfect_separation():
    s = surface_of({"a": (np.arange(10.0), np.arange(10.0) + 100), "b": (np.arange(10.0), np.arange(10.0) + 50)})
    assert auc(roc(s, "a")) == 1.0
    assert partial_auc_worst_case(s, 0.05) == {"a": 1.0, "b": 1.0}


class TestCalibration:
    def test_example(self):
        s = surface_of({"a": (np.arange(1.0, 11.0), np.zeros(1))})
        gamma = calibrate_threshold(s, 0.2)
        assert 8.0 < gamma <= 9.0
        assert s.fpr("a", gamma) == 0.2

    def test_worst_case_takes_largest(self):
        s = surface_of({"a": (np.arange(10.0), [0.0]), "b": (np.arange(10.0) + 5, [0.0])})
        g = calibrate_threshold(s, 0.1, mode="worst-case")
        assert max(s.fpr("a", g), s.fpr("b", g)) <= 0.1
        assert g == calibrate_threshold(s, 0.1, nuisance_id="b")

    def test_chi2_glrt_threshold(self):
        model = DCModel(noise="gaussian")
        x = model.simulate(model.null_point(0.8), 200000, stream(3))
        # n * xbar^2 / sigma^2 is chi2_1 under the null with known sigma
        t = x.shape[-1] * x.mean(axis=-1) ** 2 / 0.64
        s = surface_of({"a": (t, [0.0])})
        assert calibrate_threshold(s, 0.05) == pytest.approx(3.841, abs=0.06)

    def test_errors(self):
        s = surface_of({"a": (np.ones(5), [0.0])})
        with pytest.raises(ValueError):
            calibrate_threshold(s, 0.1)
        s = surface_of({"a": (np.arange(5.0), [0.0])})
        for target in (0.0, 1.5):
            with pytest.raises(ValueError):
                calibrate_threshold(s, target)
        with pytest.raises(ValueError):
            calibrate_threshold(s, 0.1, mode="average")
        assert calibrate_threshold(s, 1.0) == -np.inf


class TestChi2:
    @pytest.mark.parametrize("dof, target", [(1, 0.05), (2, 0.05), (5, 0.01), (30, 0.001)])
    def test_threshold_matches_scipy(self, dof, target):
        assert chi2_threshold(dof, target) == pytest.approx(stats.chi2.isf(target, dof), rel=1e-10)

    def test_known_value(self):
        assert chi2_threshold(1, 0.05) == pytest.approx(3.841459, abs=1e-6)
        assert chi2_sf(3.841458820694124, 1) == pytest.approx(0.05, rel=1e-12)

    def test_errors(self):
        for dof, target in [(0, 0.05), (1, 0.0), (1, 1.0)]:
            with pytest.raises(ValueError):
                chi2_threshold(dof, target)


class TestCfarDeviation:
    def test_identical_nuisances(self):
        h0 = stream(4).normal(size=500)
        rep = cfar_deviation(surface_of({"a": (h0, [0.0]), "b": (h0.copy(), [0.0])}))
        assert rep.max_gap == 0.0 and rep.is_cfar

    def test_shifted_nuisances(self):
        rng = stream(5)
        rep = cfar_deviation(surface_of({"a": (rng.normal(size=5000), [0.0]),
                                         "b": (rng.normal(1.0, 1.0, size=5000), [0.0])}))
        # the largest gap between N(0,1) and N(1,1) tails is 2 * Phi(0.5) - 1
        assert rep.max_gap == pytest.approx(2 * stats.norm.cdf(0.5) - 1, abs=0.03)
        assert not rep.is_cfar

    def test_glrt_dc_is_cfar(self):
        model = DCModel()
        s = estimate_surface(detectors.glrt_dc, model, [0.5, 1.0], 20000, 6)
        rep = cfar_deviation(s)
        assert rep.is_cfar and rep.max_gap < 0.03

    def test_needs_two(self):
        with pytest.raises(ValueError):
            cfar_deviation(surface_of({"a": ([1.0, 2.0], [0.0])}))


def test_partial_auc_diagonal():
    rng = stream(7)
    n = 200000
    s = surface_of({"a": (rng.random(n), rng.random(n)), "b": (rng.random(n), rng.random(n))})
    # a useless detector has TPR = FPR, so its normalized area on (0, c] is c / 2
    for value in partial_auc_worst_case(s, 0.05).values():
        assert value == pytest.approx(0.025, abs=0.003)
    with pytest.raises(ValueError):
        partial_auc_worst_case(s, 0.0)


def test_surface_is_order_independent():
    rng = stream(8)
    h0, h1 = rng.normal(size=100), rng.normal(size=100)
    a = surface_of({"a": (h0, h1)})
    b = surface_of({"a": (h0[::-1], rng.permutation(h1))})
    np.testing.assert_array_equal(roc(a, "a"), roc(b, "a"))


def test_write_reports(tmp_path):
    s = estimate_surface(detectors.glrt_dc, DCModel(), [0.5, 1.0], 500, 9)
    paths = write_reports({"glrt_dc": s}, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(f"{k}.csv" for k in paths)
    assert (tmp_path / "auc.csv").read_text().startswith("# cfardet auc v1\n")
    rows = read_csv(paths["auc"])
    assert {r["nuisance_id"] for r in rows} == {"sigma=0.5", "sigma=1"}
    for r in rows:
        assert float(r["auc"]) == pytest.approx(auc(roc(s, r["nuisance_id"])))
    summary = [r for r in read_csv(paths["cfar_report"]) if r["nuisance_a"] == "*"]
    assert len(summary) == 1 and summary[0]["cfar"] == "1"
