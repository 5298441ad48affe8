from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kaczsketch import analysis
from kaczsketch.analysis import (
    BoundReport,
    deviation_t,
    empirical_epsilon,
    lambda_max_block,
    ls_rabk_bound,
    mwrk_bound,
    mwrk_deviation_bound,
    rabk_bound,
    rabk_deviation_bound,
    range_preservation_check,
    rs_mwrk_bound,
    spectral_summary,
    theoretical_sketch_size,
)
from kaczsketch.sketch import RowSampleQ, apply_row_sample, build_row_sample, exact_distortion
from kaczsketch.solvers import SolverConfig, solve

SEEDS = st.integers(0, 2**32 - 1)
EPS = st.floats(0.0, 0.99)


def gaussian(m, n, seed, normalize=False):
    A = np.random.default_rng(seed).standard_normal((m, n))
    if normalize:
        A /= np.linalg.norm(A, axis=1, keepdims=True)
    return A


class TestSpectralSummary:
    def test_identity_four_blocks(self):
        s = spectral_summary(np.eye(4), tau=2, block_mode="partition")
        assert s.lambda_max_block == pytest.approx(1.0) and s.block_exact

    def test_identity_two(self):
        s = spectral_summary(np.eye(2))
        assert (s.sigma_r, s.frob_sq, s.max_row_sum_sq) == (1.0, 2.0, 1.0)
        assert s.unit_rows and s.lambda_max_block is None

    def test_gaussian_against_dense_oracle(self):
        A = gaussian(200, 10, 42)
        s = spectral_summary(A, tau=4, block_mode="partition", seed=1)
        eig = np.linalg.eigvalsh(A.T @ A)
        norms = [sum(v * v for v in row) for row in A.tolist()]
        assert s.lambda_min_nz == pytest.approx(eig[0], rel=1e-8)
        assert s.sigma_r == pytest.approx(np.sqrt(eig[0]), rel=1e-8)
        assert s.frob_sq == pytest.approx(np.trace(A.T @ A), rel=1e-8)
        assert s.max_row_sum_sq == pytest.approx(max(sum(norms) - v for v in norms), rel=1e-8)
        blocks = analysis.partition_blocks(np.random.default_rng(1), np.arange(200), 4)
        lam = 0.0
        for J in blocks:
            M = A[J].T @ np.diag(1 / np.array(norms)[J]) @ A[J]
            lam = max(lam, np.linalg.eigvalsh(M)[-1])
        assert s.lambda_max_block == pytest.approx(lam, rel=1e-8)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            spectral_summary(np.zeros((3, 2)))

    def test_fresh_mode_records_draws(self):
        s = spectral_summary(gaussian(50, 5, 0), tau=3, draws=77)
        assert s.block_draws == 77 and s.block_exact is False

    @settings(max_examples=30)
    @given(st.integers(2, 40), st.integers(1, 6), SEEDS)
    def test_invariants(self, m, n, seed):
        A = gaussian(m, n, seed)
        s = spectral_summary(A)
        assert s.sigma_r > 0 and s.frob_sq >= s.sigma_r**2 * (1 - 1e-12)
        assert s.lambda_min_nz == pytest.approx(s.sigma_r**2, rel=1e-10)
        assert s.max_row_sum_sq < s.frob_sq

    @given(st.integers(1, 8), SEEDS)
    def test_block_lambda_between_one_and_tau(self, tau, seed):
        lam, _ = lambda_max_block(gaussian(30, 5, seed), tau, draws=20, seed=seed)
        assert 1 - 1e-12 <= lam <= min(tau, 5) + 1e-12


class TestMwrkBound:
    def test_identity_two(self):
        r = mwrk_bound(spectral_summary(np.eye(2)))
        assert (r.first_factor, r.factor) == (0.5, 0.0)

    @pytest.mark.parametrize("n", [3, 5, 9])
    def test_identity_closed_form(self, n):
        r = mwrk_bound(spectral_summary(np.eye(n)))
        assert r.first_factor == pytest.approx(1 - 1 / n)
        assert r.factor == pytest.approx(1 - 1 / (n - 1))

    def test_envelope_dominates_gaussian(self):
        A = gaussian(200, 10, 3)
        xs = np.random.default_rng(4).standard_normal(10)
        tr = solve(A, A @ xs, SolverConfig("MWRK"), xstar=xs)
        r = mwrk_bound(spectral_summary(A))
        assert 0 < r.factor < 1 and 0 < r.first_factor < 1
        env = r.envelope(tr.res_iters, initial=1.0)
        assert (tr.res_values <= env * (1 + 1e-12)).all()


class TestSketchedBounds:
    def setup_method(self):
        A = gaussian(100, 5, 7)
        self.orig = spectral_summary(A, tau=2)
        self.sk = spectral_summary(apply_row_sample(build_row_sample(100, 50, 1), A,
                                                    np.zeros(100)).A)

    def test_zero_epsilon_limit(self):
        r = rs_mwrk_bound(self.orig, self.sk, 0.0)
        ref = mwrk_bound(replace(self.sk, sigma_r=self.orig.sigma_r))
        assert r.factor == pytest.approx(ref.factor)
        assert r.first_factor == pytest.approx(mwrk_bound(self.orig).first_factor)

    def test_half_epsilon_multiplier(self):
        r = rs_mwrk_bound(self.orig, self.sk, 0.5)
        ratio = self.orig.sigma_r**2 / self.orig.frob_sq
        assert r.first_factor == pytest.approx(1 - ratio / 9)

    @given(EPS)
    def test_sketching_slows_the_factors(self, eps):
        r = rs_mwrk_bound(self.orig, self.sk, eps)
        ref = rs_mwrk_bound(self.orig, self.sk, 0.0)
        assert r.factor >= ref.factor and r.first_factor >= ref.first_factor

    @pytest.mark.parametrize("eps", [-0.1, 1.0, 1.5])
    def test_epsilon_range(self, eps):
        with pytest.raises(ValueError):
            rs_mwrk_bound(self.orig, self.sk, eps)
        with pytest.raises(ValueError):
            ls_rabk_bound(self.orig, 2, 50, eps)
        with pytest.raises(ValueError):
            mwrk_deviation_bound(self.orig, self.sk, eps, 1.0)


class TestRabkBounds:
    @pytest.mark.parametrize("m", [3, 6, 10])
    def test_identity(self, m):
        s = spectral_summary(np.eye(m), tau=1, block_mode="partition")
        assert rabk_bound(s, 1).factor == pytest.approx(1 - 1 / m)
        s = spectral_summary(np.eye(m), tau=m - 1, block_mode="partition")
        assert rabk_bound(s, m - 1).factor == pytest.approx(1 - (m - 1) / m)

    def test_tau_must_be_positive(self):
        s = spectral_summary(np.eye(3), tau=1)
        with pytest.raises(ValueError):
            rabk_bound(s, 0)

    def test_normalization_note(self):
        s = spectral_summary(gaussian(30, 3, 0), tau=2)
        assert rabk_bound(s, 2).notes
        s = spectral_summary(gaussian(30, 3, 0, normalize=True), tau=2)
        assert not rabk_bound(s, 2).notes

    def test_ls_reproduces_rabk_at_full_size(self):
        s = spectral_summary(gaussian(60, 4, 1, normalize=True), tau=3)
        assert ls_rabk_bound(s, 3, 60, 0.0).factor == pytest.approx(rabk_bound(s, 3).factor)

    @given(st.integers(5, 60), SEEDS, st.data())
    def test_ls_factor_smaller_below_full_size(self, m, seed, data):
        s = spectral_summary(gaussian(m, 3, seed, normalize=True), tau=2, draws=50)
        d = data.draw(st.integers(1, m - 1))
        assert ls_rabk_bound(s, 2, d, 0.0).factor < rabk_bound(s, 2).factor

    def test_rank_one_is_flagged(self):
        report = mwrk_bound(spectral_summary(gaussian(6, 1, 0)))
        assert not report.hypotheses_ok and report.factor < 0

    def test_single_row_sketch_is_flagged(self):
        A = gaussian(6, 2, 0)
        report = rs_mwrk_bound(spectral_summary(A), spectral_summary(A[:1]), 0.1)
        assert not report.hypotheses_ok and np.isnan(report.factor)

    def test_hypothesis_flag(self):
        s = replace(spectral_summary(np.eye(4), tau=1), lambda_max_block=0.1)
        report = rabk_bound(s, 1)
        assert not report.hypotheses_ok and any("violated" in n for n in report.notes)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(6, 60), st.integers(2, 5), SEEDS, st.data())
    def test_factors_in_unit_interval(self, m, n, seed, data):
        # rank >= 2 and an epsilon that really bounds the sketch's distortion
        A = gaussian(m, n, seed, normalize=True)
        tau = data.draw(st.integers(1, m // 2))
        d = data.draw(st.integers(n, m - 1))
        At = A[build_row_sample(m, d, seed).selected]
        eps = empirical_epsilon(*exact_distortion(At, A))
        assume(eps < 1)
        s = spectral_summary(A, tau=tau, block_mode="partition", seed=seed)
        sk = spectral_summary(At)
        for report in (mwrk_bound(s), rabk_bound(s, tau), rs_mwrk_bound(s, sk, eps),
                       ls_rabk_bound(s, tau, d, eps)):
            assert report.hypotheses_ok, report
            assert 0 <= report.factor < 1


class TestDeviationBounds:
    def setup_method(self):
        A = gaussian(100, 5, 9)
        self.orig = spectral_summary(A, tau=2)
        self.sk = spectral_summary(A[:40])

    def test_zero_epsilon(self):
        t = deviation_t(self.orig, self.sk)
        expect = 4 * (1 - self.orig.sigma_r**2 / t) * 0.3
        assert mwrk_deviation_bound(self.orig, self.sk, 0.0, 0.3) == pytest.approx(expect)

    def test_zero_p(self):
        assert mwrk_deviation_bound(self.orig, self.sk, 0.4, 0.0) == 0.0

    def test_t_is_the_larger_row_sum(self):
        assert deviation_t(self.orig, self.sk) == max(self.orig.max_row_sum_sq,
                                                      self.sk.max_row_sum_sq)

    def test_rabk_deviation_k_zero(self):
        assert rabk_deviation_bound(self.orig, 2, 100, 0.3, 2.5, 0) == pytest.approx(10.0)

    def test_rabk_deviation_decays(self):
        assert rabk_deviation_bound(self.orig, 2, 100, 0.3, 1.0, 10**6) < 1e-12

    def test_rabk_deviation_scalar_formula(self):
        s = spectral_summary(gaussian(100, 5, 10, normalize=True), tau=4, seed=2)
        base = 4 / s.lambda_max_block * s.sigma_r**2 / 100
        att = (1 - 0.25) ** 2 / (1 + 0.25) ** 2
        expect = ((1 - base) ** 50 + 3 * (1 - att * base) ** 50) * 2.0
        assert rabk_deviation_bound(s, 4, 100, 0.25, 2.0, 50) == pytest.approx(expect, rel=1e-12)


class TestRangePreservation:
    def test_independent_rows_give_equal_ranges(self):
        A = gaussian(40, 5, 11)
        Q = RowSampleQ(40, 5, 0, np.arange(5))
        check = range_preservation_check(A, apply_row_sample(Q, A, np.zeros(40)).A)
        assert check.sine <= 1e-8 and check.equal and check.contained

    def test_too_few_rows(self):
        A = gaussian(40, 5, 12)
        check = range_preservation_check(A, A[:3])
        assert check.contained and not check.equal
        assert (check.rank_original, check.rank_sketched) == (5, 3)

    def test_identity_sketch(self):
        A = gaussian(20, 4, 13)
        assert range_preservation_check(A, A).sine <= 1e-12

    def test_foreign_rows_not_contained(self):
        A = np.hstack([gaussian(20, 2, 14), np.zeros((20, 1))])
        check = range_preservation_check(A, np.array([[0.0, 0.0, 1.0]]))
        assert not check.contained and check.containment == pytest.approx(1.0)


class TestMisc:
    def test_empirical_epsilon(self):
        assert empirical_epsilon(0.8, 1.1) == pytest.approx(0.2)
        assert empirical_epsilon(0.95, 1.3) == pytest.approx(0.3)
        assert empirical_epsilon(1.0, 1.0) == 0.0

    def test_theoretical_sketch_size(self):
        assert theoretical_sketch_size(10, 0.5, 0.1) == pytest.approx(4000.0)
        assert theoretical_sketch_size(10, 0.5, 0.1, constant=0.5) == pytest.approx(2000.0)
        with pytest.raises(ValueError):
            theoretical_sketch_size(10, 0.0, 0.1)

    def test_envelope_shapes(self):
        r = BoundReport("MWRK", factor=0.5, first_factor=0.8)
        np.testing.assert_allclose(r.envelope(np.arange(4), 2.0), [2.0, 1.6, 0.8, 0.4])
        r = BoundReport("RaBK", factor=0.5)
        np.testing.assert_allclose(r.envelope(np.arange(3)), [1.0, 0.5, 0.25])

    def test_report_serializes(self):
        import json

        s = spectral_summary(np.eye(3), tau=1)
        json.dumps(rabk_bound(s, 1).to_dict())
        json.dumps(s.to_dict())

    def test_sketch_index_distinct_for_summary(self):
        Q = build_row_sample(30, 10, 0)
        assert np.unique(Q.selected).size == 10
