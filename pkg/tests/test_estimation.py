import math

import numpy as np
import pytest

from mesobell import physics
from mesobell.errors import (
    BinConfigurationError,
    EmptyBinError,
    EmptyBinningError,
    InsufficientDataError,
    ValidationError,
)
from mesobell.estimation import (
    BinnedCorrelation,
    BinningScheme,
    bin_events,
    compare_to_model,
    estimate_chsh,
    estimate_correlation,
    expected_bins,
    scan_chsh,
)
from mesobell.eventgen import EventDataset, GenerationConfig, generate_dataset
from mesobell.physics import PhysicsParams

SCHEME = BinningScheme(width=0.5, dt_max=12.0)


def _dataset(params, rows):
    """rows of (t_l, mode_l label, t_r, mode_r label)."""
    idx = {m.label: i for i, m in enumerate(params.decay_modes)}
    tl, ml, tr, mr = zip(*rows)
    return EventDataset(
        params=params,
        t_l=np.array(tl, dtype=float),
        mode_l=np.array([idx[m] for m in ml]),
        t_r=np.array(tr, dtype=float),
        mode_r=np.array([idx[m] for m in mr]),
    )


class TestBinningScheme:
    def test_edges(self):
        s = BinningScheme(0.5, 2.0)
        assert s.n_bins == 4
        assert list(s.edges) == [0.0, 0.5, 1.0, 1.5, 2.0]
        assert list(s.centers) == [0.25, 0.75, 1.25, 1.75]
        assert s.index(1.5) == 3 and s.index(2.0) is None

    @pytest.mark.parametrize("w,m", [(0.0, 1.0), (-0.5, 2.0), (0.5, 1.3), (0.5, 0.0)])
    def test_invalid(self, w, m):
        with pytest.raises(ValidationError):
            BinningScheme(w, m)


class TestEstimateCorrelation:
    def test_symmetric(self):
        e, s = estimate_correlation(BinnedCorrelation(0, 1, 500, 500))
        assert e == 0.0
        assert s == pytest.approx(0.0316, abs=5e-5)

    def test_degenerate_wald(self):
        assert estimate_correlation(BinnedCorrelation(0, 1, 0, 1000), floor=False) == (-1.0, 0.0)

    def test_degenerate_wilson_floor(self):
        e, s = estimate_correlation(BinnedCorrelation(0, 1, 0, 1000))
        assert e == -1.0
        # Wilson half-width at z = 1 for 0 successes in n, on the 2p - 1 scale
        assert s == pytest.approx(1.0 / 1001, rel=1e-12)
        assert s > 0

    def test_unbalanced_bootstrap(self):
        b = BinnedCorrelation(0, 1, 250, 750)
        e, s = estimate_correlation(b)
        assert e == -0.5
        assert s == pytest.approx(0.0274, abs=5e-5)
        rng = np.random.default_rng(12)
        sample = np.r_[np.ones(250), -np.ones(750)]
        boots = rng.choice(sample, size=(4000, sample.size)).mean(axis=1)
        assert boots.std(ddof=1) == pytest.approx(s, rel=0.05)

    def test_empty(self):
        empty = BinnedCorrelation(0, 1, 0, 0)
        with pytest.raises(EmptyBinError):
            estimate_correlation(empty)
        assert empty.empty and math.isnan(empty.e_hat)


class TestBinEvents:
    def test_all_opposite_at_zero(self, params):
        rows = [(0.1, "Dstar-l-nu", 0.12, "Dstar-l-nu-cc")] * 2 + [(0.3, "other-cc", 0.31, "other")] * 2
        bins = bin_events(_dataset(params, rows), SCHEME)
        assert bins[0].n_opp == 4 and bins[0].n_same == 0
        assert bins[0].e_hat == -1.0
        assert all(b.empty for b in bins[1:])

    def test_uses_absolute_dt(self, params):
        rows = [(0.0, "Dstar-l-nu", 1.2, "Dstar-l-nu"), (1.2, "Dstar-l-nu", 0.0, "Dstar-l-nu")]
        bins = bin_events(_dataset(params, rows), SCHEME)
        assert bins[2].n_same == 2

    def test_tagged_only_filters(self, params):
        rows = [(0.1, "Dstar-l-nu", 0.2, "other-cc"), (0.1, "Dstar-l-nu", 0.2, "Dstar-l-nu-cc")]
        bins = bin_events(_dataset(params, rows), SCHEME, tagged_only=True)
        assert bins[0].n == 1

    def test_only_untaggable(self, params):
        rows = [(0.1, "other", 0.2, "other-cc")] * 3
        with pytest.raises(EmptyBinningError):
            bin_events(_dataset(params, rows), SCHEME, tagged_only=True)

    def test_overflow_dropped(self, params):
        rows = [(0.0, "other", 30.0, "other-cc"), (0.1, "other", 0.2, "other-cc")]
        bins = bin_events(_dataset(params, rows), SCHEME)
        assert sum(b.n for b in bins) == 1

    def test_quarter_period_bin(self, million, params):
        dt = math.pi / (2 * params.delta_m)
        # bin 15 is centred on dt
        w = dt / 15.5
        scheme = BinningScheme(width=w, dt_max=60 * w)
        b = bin_events(million, scheme)[15]
        assert b.center == pytest.approx(dt, abs=1e-12)
        assert abs(b.e_hat - physics.correlation(dt, params)) <= 3 * b.sigma_e

    def test_tagged_only_compatible(self, million):
        all_modes = bin_events(million, SCHEME)
        tagged = bin_events(million, SCHEME, tagged_only=True)
        for a, t in zip(all_modes, tagged):
            if a.empty or t.empty:
                continue
            assert abs(a.e_hat - t.e_hat) <= 4 * math.hypot(a.sigma_e, t.sigma_e)

    def test_lhv_readout_identical(self, params):
        ds = generate_dataset(GenerationConfig(n_pairs=20_000, seed=11, params=params))
        assert bin_events(ds, SCHEME, readout="qm") == bin_events(ds, SCHEME, readout="lhv")
        assert bin_events(ds, SCHEME, True, "qm") == bin_events(ds, SCHEME, True, "lhv")

    def test_bad_readout(self, million):
        with pytest.raises(ValueError):
            bin_events(million, SCHEME, readout="magic")


class TestEstimateChsh:
    def test_boundary_limit(self):
        bins = [BinnedCorrelation(0, 0.5, 0, 100), BinnedCorrelation(0.5, 1.0, 0, 100)]
        est = estimate_chsh(bins, 0.25)
        assert est.s_hat == 2.0
        assert est.significance == 0.0

    def test_uncertainty_combination(self):
        bins = [BinnedCorrelation(0, 0.5, 10, 90), BinnedCorrelation(0.5, 1.0, 30, 70)]
        est = estimate_chsh(bins, 0.25)
        e1, s1 = estimate_correlation(bins[0])
        e3, s3 = estimate_correlation(bins[1])
        assert est.s_hat == pytest.approx(abs(3 * e1 - e3))
        assert est.sigma_s == pytest.approx(math.sqrt(9 * s1**2 + s3**2))

    def test_perfect_statistics_maximum(self, params):
        # bins narrow enough that bin averages approach the curve values
        w = 1e-4
        dt = math.pi / (4 * params.delta_m)
        scheme = BinningScheme(width=w, dt_max=w * math.ceil(4 * dt / w))
        bins = expected_bins(scheme, params, n_pairs=10**15)
        est = estimate_chsh(bins, dt)
        assert est.s_hat == pytest.approx(2 * math.sqrt(2), abs=1e-3)

    def test_overlap_rejected(self):
        bins = [BinnedCorrelation(0, 1.0, 10, 90), BinnedCorrelation(1.0, 2.0, 30, 70)]
        with pytest.raises(BinConfigurationError):
            estimate_chsh(bins, 0.1)

    def test_missing_rejected(self):
        bins = [BinnedCorrelation(0, 1.0, 10, 90)]
        with pytest.raises(BinConfigurationError):
            estimate_chsh(bins, 0.6)

    def test_empty_rejected(self):
        bins = [BinnedCorrelation(0, 0.5, 10, 90), BinnedCorrelation(0.5, 1.0, 0, 0)]
        with pytest.raises(BinConfigurationError):
            estimate_chsh(bins, 0.25)

    def test_violation_at_two_ps(self, million):
        est = estimate_chsh(bin_events(million, SCHEME), 2.0)
        assert est.s_hat > 2 and est.significance > 3

    def test_smallest_grid_point(self, million, params):
        est = estimate_chsh(bin_events(million, SCHEME), SCHEME.centers[0])
        assert abs(est.s_hat - est.predicted(params)) <= 4 * est.sigma_s


class TestScan:
    def test_closed_form_argmax(self, params):
        # oracle: grid scan of the closed-form statistic
        grid = np.linspace(0, 4, 400001)
        oracle = grid[np.argmax(physics.chsh_statistic(grid, params))]
        assert params.delta_m * oracle == pytest.approx(math.pi / 4, abs=1e-4)
        assert oracle == pytest.approx(1.549, abs=1e-3)

        w = 0.01
        scheme = BinningScheme(width=w, dt_max=12.0)
        curve = scan_chsh(expected_bins(scheme, params, 10**15), scheme)
        assert abs(curve.argmax - oracle) <= w

    def test_grid_points_are_centres(self, million):
        curve = scan_chsh(bin_events(million, SCHEME), SCHEME)
        for e in curve.estimates:
            assert e.bin_1.center == e.delta_t
            assert e.bin_3.center == pytest.approx(3 * e.delta_t, abs=1e-12)
            assert 3 * e.delta_t < SCHEME.dt_max

    def test_window_edge(self, million, params):
        curve = scan_chsh(bin_events(million, SCHEME), SCHEME)
        lo, hi = curve.violation_window
        assert lo == SCHEME.centers[0]
        assert abs(hi - physics.violation_boundary(params)) <= 2 * SCHEME.width


class TestCompareToModel:
    def test_exact_sampler_fits(self, million, params):
        report = compare_to_model(bin_events(million, SCHEME), params)
        assert 0.5 <= report.reduced_chi2 <= 1.5
        assert report.dof == SCHEME.n_bins

    def test_wrong_dm_rejected(self, million, params):
        wrong = PhysicsParams(delta_m=1.5 * params.delta_m)
        assert compare_to_model(bin_events(million, SCHEME), wrong).reduced_chi2 > 5

    def test_centre_reference_is_biased(self, million, params):
        report = compare_to_model(bin_events(million, SCHEME), params, reference="center")
        assert report.reduced_chi2 > 2

    def test_insufficient(self, params):
        with pytest.raises(InsufficientDataError):
            compare_to_model([BinnedCorrelation(0, 1, 4, 5)], params)


def test_estimator_consistency(params):
    worst = []
    for n, seed in ((10**4, 1), (10**5, 2), (10**6, 3)):
        ds = generate_dataset(GenerationConfig(n_pairs=n, seed=seed, params=params))
        bins = [b for b in bin_events(ds, SCHEME) if not b.empty]
        dev = [abs(b.e_hat - physics.mean_correlation_in_bin(b.lo, b.hi, params)) for b in bins]
        worst.append(max(dev))
        if n == 10**6:
            for b, d in zip(bins, dev):
                assert d <= 4 * b.sigma_e
    assert worst[0] > worst[1] > worst[2]
