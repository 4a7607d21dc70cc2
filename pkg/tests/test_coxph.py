import math

import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from lgmfit.coxph import (BinGrid, augment, make_bins, simulate_cox,
                          survival_loglik)
from lgmfit.errors import DataError, LgmError
from lgmfit.families import log_lik_vec
from lgmfit.model import build_model


class TestBinGrid:
    def test_equal_width_hand(self):
        bins = make_bins(np.array([3.0, 10.0, 7.0]), B=5)
        assert np.allclose(bins.cuts, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
        assert bins.B == 5
        assert np.allclose(bins.widths, 2.0)

    def test_single_bin(self):
        bins = make_bins(np.array([4.0]), B=1)
        assert bins.B == 1
        assert np.allclose(bins.cuts, [0.0, 4.0])

    def test_quantile_bins_cover_events(self):
        rng = np.random.default_rng(3)
        t = rng.weibull(1.2, 500) * 2.0
        bins = make_bins(t, B=10, mode="quantile")
        k = bins.bin_of(t)
        counts = np.bincount(k, minlength=bins.B)
        assert (counts >= 1).all()

    def test_bin_of_boundaries(self):
        bins = BinGrid(np.array([0.0, 1.0, 2.0, 3.0]))
        # boundary times fall in the lower bin
        assert list(bins.bin_of(np.array([0.5, 1.0, 1.5, 3.0]))) == \
            [0, 0, 1, 2]

    def test_validation(self):
        with pytest.raises(LgmError):
            BinGrid(np.array([0.5, 1.0]))
        with pytest.raises(LgmError):
            BinGrid(np.array([0.0, 1.0, 1.0]))
        bins = BinGrid(np.array([0.0, 1.0]))
        with pytest.raises(DataError):
            bins.bin_of(np.array([0.0]))
        with pytest.raises(DataError):
            bins.bin_of(np.array([1.5]))


class TestAugment:
    def test_event_in_first_bin(self):
        bins = BinGrid(np.array([0.0, 2.0, 4.0]))
        aug = augment(np.array([1.5]), np.array([1]), {"x": np.array([0.3])},
                      bins)
        assert aug.n_rows == 1
        row = aug.data.iloc[0]
        assert row["y"] == 1.0
        assert row["exposure"] == pytest.approx(1.5)
        assert row["bin"] == 0
        assert row["x"] == pytest.approx(0.3)

    def test_censored_in_third_bin(self):
        bins = BinGrid(np.array([0.0, 1.0, 3.0, 6.0]))
        aug = augment(np.array([4.0]), np.array([0]), None, bins)
        assert aug.n_rows == 3
        assert list(aug.data["y"]) == [0.0, 0.0, 0.0]
        assert np.allclose(aug.data["exposure"], [1.0, 2.0, 1.0])
        assert list(aug.data["bin"]) == [0, 1, 2]

    def test_exposure_conserved(self):
        rng = np.random.default_rng(11)
        t = rng.weibull(1.2, 200) * 3.0
        d = rng.integers(0, 2, 200)
        bins = make_bins(t, B=12)
        aug = augment(t, d, None, bins)
        assert aug.total_exposure() == pytest.approx(t.sum(), rel=1e-12)

    def test_row_count(self):
        rng = np.random.default_rng(12)
        t = rng.weibull(1.2, 100) * 2.0
        bins = make_bins(t, B=8)
        aug = augment(t, np.ones(100, dtype=int), None, bins)
        assert aug.n_rows == int((bins.bin_of(t) + 1).sum()) - aug.dropped

    def test_boundary_event_drops_zero_exposure_row(self):
        # an event exactly on a cut lands in the lower bin: no empty row
        bins = BinGrid(np.array([0.0, 1.0, 2.0]))
        warnings = []
        aug = augment(np.array([1.0]), np.array([1]), None, bins,
                      warnings_out=warnings)
        assert aug.n_rows == 1
        assert aug.dropped == 0
        assert aug.data.iloc[0]["exposure"] == pytest.approx(1.0)
        assert warnings == []

    def test_events_validated(self):
        bins = BinGrid(np.array([0.0, 1.0]))
        with pytest.raises(DataError):
            augment(np.array([0.5]), np.array([2]), None, bins)

    def test_description_components(self):
        t = np.array([0.5, 1.5, 2.5])
        bins = make_bins(t, B=3)
        aug = augment(t, np.ones(3, dtype=int), {"x": np.zeros(3)}, bins)
        desc = aug.description()
        assert desc.family == "poisson"
        assert desc.exposure == "exposure"
        kinds = [c.kind for c in desc.components]
        assert kinds == ["intercept", "rw1", "linear"]
        walk = desc.components[1]
        assert walk.size == 3
        assert walk.scaled and walk.constrained
        with pytest.raises(LgmError):
            aug.description(baseline="rw3")


class TestLikelihoodEquivalence:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_poisson_rows_reproduce_survival_loglik(self, seed):
        # augmented Poisson loglik differs from the survival loglik only by
        # the data-dependent constant sum over events of log(last exposure)
        rng = np.random.default_rng(100 + seed)
        n = 60
        t = rng.weibull(1.2, n) * 2.0
        d = rng.integers(0, 2, n)
        x = rng.normal(size=n)
        bins = make_bins(t, B=6)
        aug = augment(t, d, {"x": x}, bins)
        log_h = rng.normal(size=bins.B) * 0.4
        beta = 0.3

        direct = survival_loglik(t, d, x, beta, log_h, bins)

        desc = aug.description()
        model, design, family = build_model(desc, aug.data)
        # latent field order: intercept, walk levels, slope; encode the
        # chosen hazard as intercept 0, walk = log_h, slope beta
        eta = design @ np.concatenate(([0.0], log_h, [beta]))
        aug_ll = float(np.sum(log_lik_vec(family, eta, np.zeros(0))))

        last = aug.data.groupby("subject").tail(1)
        const = float(np.log(last[last["y"] == 1.0]["exposure"]).sum())
        assert aug_ll - direct == pytest.approx(const, abs=1e-10)


class TestSimulate:
    def test_zero_beta_weibull_mean(self):
        t, d, x = simulate_cox(100_000, beta=0.0, seed=4)
        assert d.all()
        want = gamma_fn(1.0 + 1.0 / 1.2)
        se = t.std() / math.sqrt(t.size)
        assert abs(t.mean() - want) <= 4 * se

    def test_covariate_standardized(self):
        t, d, x = simulate_cox(500, seed=9)
        assert x.mean() == pytest.approx(0.0, abs=1e-12)
        assert x.std() == pytest.approx(1.0, abs=1e-12)

    def test_seed_determinism(self):
        a = simulate_cox(200, seed=42)
        b = simulate_cox(200, seed=42)
        for u, v in zip(a, b):
            assert np.array_equal(u, v)
        c = simulate_cox(200, seed=43)
        assert not np.array_equal(a[0], c[0])

    def test_horizon_censors(self):
        t, d, x = simulate_cox(2000, seed=1, horizon=1.0)
        assert t.max() <= 1.0
        assert (d == 0).any() and (d == 1).any()
        assert np.all(t[d == 0] == 1.0)

    def test_augmented_row_count_scale(self):
        t, d, x = simulate_cox(100, seed=0)
        bins = make_bins(t, B=50)
        aug = augment(t, d, {"x": x}, bins)
        assert 300 <= aug.n_rows <= 5000


class TestFitRecoversBeta:
    def test_ci_covers_truth(self):
        from lgmfit.fit import FitConfig, fit

        t, d, x = simulate_cox(800, beta=0.1, seed=16)
        bins = make_bins(t, B=25)
        aug = augment(t, d, {"x": x}, bins)
        res = fit(aug.description(), aug.data, FitConfig(seed=0))
        assert res.report.all_converged
        names = res.model.latent_names()
        j = names.index("x")
        lo, hi = res.latent.q025[j], res.latent.q975[j]
        assert lo < 0.1 < hi
