import io
import json

import numpy as np
import pytest
from scipy.special import ndtr

from rmquant import (AffineUpdate, CodewordDomainError, InnovationLaw,
                     Schedule, european_price, implied_marginal_cdf,
                     load_sequence_json, mixture_distortion, normalized_bounds,
                     rmq_newton_step, rmq_run, transition_set)
from rmquant.affine_schemes import SCHEME_BUILDERS, euler_updates
from rmquant.rmq_engine import _mixture_evaluator
from rmquant.vq1d import (Quantizer, distortion_gradient, distortion_hessian,
                          newton_quantize, region_boundaries)
from rmquant.distributions import ScalarDistribution, norm_cdf, norm_m1, norm_pdf

from conftest import CEV_LOW_ALPHA

GBM_MEAN_1Y = 105.12710963760241
PAPER_SCHEDULE = Schedule(T=1.0, K=12, n_per_step=200, n_max_vq=50, n_max_rmq=5)


def small_mixture():
    prev = Quantizer(np.array([0.8, 1.1, 1.6]), np.array([0.3, 0.5, 0.2]))
    updates = [AffineUpdate(m=0.21, c=0.9, law=InnovationLaw("ncx2", 3.0)),
               AffineUpdate(m=-0.4, c=1.3, law=InnovationLaw("gaussian")),
               AffineUpdate(m=0.35, c=1.7, law=InnovationLaw("ncx2", 40.0))]
    gam = np.array([0.5, 1.0, 1.8, 2.6])
    return prev, updates, gam


class TestSchedule:
    def test_dt_and_cardinalities(self):
        s = Schedule(T=1.0, K=4, n_per_step=[10, 20, 30, 40])
        assert s.dt == 0.25
        assert [s.n_at(k) for k in (1, 2, 3, 4)] == [10, 20, 30, 40]

    def test_validation(self):
        with pytest.raises(ValueError):
            Schedule(T=0.0, K=4)
        with pytest.raises(ValueError):
            Schedule(T=1.0, K=0)
        with pytest.raises(ValueError):
            Schedule(T=1.0, K=3, n_per_step=[10, 20])
        with pytest.raises(ValueError):
            Schedule(T=1.0, K=2, n_max_rmq=0)


class TestNormalizedBounds:
    def test_affine_rescaling(self):
        rb = region_boundaries([11.0, 13.0])
        lo, up = normalized_bounds(AffineUpdate(2.0, 10.0, InnovationLaw("gaussian")), rb)
        assert np.array_equal(lo, [-np.inf, 1.0])
        assert np.array_equal(up, [1.0, np.inf])

    def test_negative_scale_swaps_roles(self):
        rb = region_boundaries([11.0, 13.0])
        lo, up = normalized_bounds(AffineUpdate(-2.0, 10.0, InnovationLaw("gaussian")), rb)
        # image of the shared state bound 12 is -1; ordering flips
        assert lo[1] == pytest.approx(-1.0)
        assert up[0] == pytest.approx(-1.0)
        assert lo[1] > up[1]

    def test_zero_truncation(self):
        rb = region_boundaries([11.0, 13.0])
        u = AffineUpdate(2.0, 10.0, InnovationLaw("gaussian"))
        lo, _ = normalized_bounds(u, rb, truncate_at_zero=True)
        assert lo[0] == pytest.approx(-5.0)  # -c/m

    def test_rejects_degenerate_scale(self):
        rb = region_boundaries([1.0])
        with pytest.raises(ValueError):
            normalized_bounds(AffineUpdate(0.0, 1.0, InnovationLaw("gaussian")), rb)


class TestImpliedMarginalCdf:
    def test_single_gaussian_component_median(self):
        prev = Quantizer(np.array([100.0]), np.array([1.0]))
        ups = [AffineUpdate(8.660254037844386, 100.41666666666667,
                            InnovationLaw("gaussian"))]
        assert implied_marginal_cdf(100.41666666666667, prev, ups) == \
            pytest.approx(0.5, abs=1e-14)
        assert implied_marginal_cdf(np.inf, prev, ups) == 1.0

    def test_mixture_limits_and_monotonicity(self):
        prev, updates, _ = small_mixture()
        x = np.linspace(-3.0, 8.0, 500)
        F = implied_marginal_cdf(x, prev, updates)
        assert np.all(np.diff(F) >= -1e-13)
        assert implied_marginal_cdf(-np.inf, prev, updates) == pytest.approx(0.0, abs=1e-15)
        assert implied_marginal_cdf(np.inf, prev, updates) == pytest.approx(1.0, abs=1e-12)


class TestTransitionSet:
    def test_single_region_captures_all_mass(self):
        prev, updates, _ = small_mixture()
        ts = transition_set(prev, updates, np.array([1.5]))
        assert ts.P == pytest.approx(np.ones((3, 1)), abs=1e-12)

    def test_free_rows_sum_to_one(self):
        prev, updates, gam = small_mixture()
        ts = transition_set(prev, updates, gam)
        assert ts.P.sum(axis=1) == pytest.approx(np.ones(3), abs=1e-10)
        assert np.all(ts.P >= 0.0)

    def test_absorbing_row_mass(self):
        # absorbed mass from a gaussian update with c = m = 1 is Phi(-1)
        prev = Quantizer(np.array([1.0]), np.array([1.0]))
        ups = [AffineUpdate(1.0, 1.0, InnovationLaw("gaussian"))]
        ts = transition_set(prev, ups, np.array([0.5, 1.5]), "absorbing")
        assert ts.P.sum() == pytest.approx(1.0 - ndtr(-1.0), abs=1e-12)
        assert ts.P.sum() == pytest.approx(0.8413447460685429, abs=1e-10)

    def test_reflecting_rows_sum_to_one(self):
        prev = Quantizer(np.array([0.5, 1.0]), np.array([0.4, 0.6]))
        ups = [AffineUpdate(0.8, 0.4, InnovationLaw("gaussian")),
               AffineUpdate(0.3, 1.1, InnovationLaw("ncx2", 5.0))]
        ts = transition_set(prev, ups, np.array([0.3, 0.9, 2.0]), "reflecting")
        assert ts.P.sum(axis=1) == pytest.approx(np.ones(2), abs=1e-10)

    def test_errors(self):
        prev, updates, gam = small_mixture()
        with pytest.raises(ValueError):
            transition_set(prev, updates, gam[::-1])
        pos_prev = Quantizer(np.array([1.0]), np.array([1.0]))
        pos_ups = [AffineUpdate(0.5, 1.0, InnovationLaw("gaussian"))]
        with pytest.raises(ValueError):
            transition_set(pos_prev, pos_ups, np.array([-1.0, 2.0]),
                           "absorbing")


class TestNewtonStep:
    def test_fixed_point_at_stationary_grid(self):
        # well-overlapping components so Newton reaches machine stationarity
        prev = Quantizer(np.array([0.8, 1.1, 1.6]), np.array([0.3, 0.5, 0.2]))
        updates = [AffineUpdate(0.5, 0.9, InnovationLaw("gaussian")),
                   AffineUpdate(0.4, 1.3, InnovationLaw("gaussian")),
                   AffineUpdate(0.25, 0.7, InnovationLaw("ncx2", 4.0))]
        gam = np.array([0.5, 1.0, 1.8, 2.6])
        from rmquant._newton import damped_newton
        from rmquant.affine_schemes import as_batch
        evaluate = _mixture_evaluator(prev.probabilities, as_batch(updates),
                                      "free")
        stat, ev = damped_newton(gam, evaluate, 100)
        assert np.max(np.abs(ev.grad)) < 1e-12  # actually stationary
        out = rmq_newton_step(stat, prev, updates)
        assert out == pytest.approx(stat, abs=1e-12)

    def test_gradient_matches_distortion_finite_differences(self):
        prev, updates, gam = small_mixture()
        from rmquant.affine_schemes import as_batch
        ev = _mixture_evaluator(prev.probabilities, as_batch(updates), "free")(gam)
        h = 1e-6
        for j in range(gam.size):
            e = np.zeros(gam.size)
            e[j] = h
            fd = (mixture_distortion(gam + e, prev, updates)
                  - mixture_distortion(gam - e, prev, updates)) / (2 * h)
            assert ev.grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_hessian_matches_gradient_finite_differences(self):
        prev, updates, gam = small_mixture()
        from rmquant.affine_schemes import as_batch
        batch = as_batch(updates)
        evaluate = _mixture_evaluator(prev.probabilities, batch, "free")
        ev = evaluate(gam)
        h = 1e-6
        fd = np.zeros((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd[:, j] = (evaluate(gam + e).grad - evaluate(gam - e).grad) / (2 * h)
        assert ev.hess_diag == pytest.approx(np.diag(fd), rel=1e-5, abs=1e-7)
        assert ev.hess_off == pytest.approx(np.diag(fd, 1), rel=1e-5, abs=1e-7)

    def test_single_component_reduces_to_vq1d(self):
        # one previous codeword: the mixture is the plain conditional law
        m, c = 0.8, 2.0
        prev = Quantizer(np.array([5.0]), np.array([1.0]))
        ups = [AffineUpdate(m, c, InnovationLaw("gaussian"))]
        law = ScalarDistribution(
            pdf=lambda x: norm_pdf((x - c) / m) / m,
            cdf=lambda x: norm_cdf((x - c) / m),
            m1=lambda x: c * norm_cdf((x - c) / m) + m * norm_m1((x - c) / m),
        )
        gam = np.array([1.2, 1.9, 2.7])
        from rmquant.affine_schemes import as_batch
        ev = _mixture_evaluator(prev.probabilities, as_batch(ups), "free")(gam)
        assert ev.grad == pytest.approx(distortion_gradient(law, gam), rel=1e-12)
        hess = distortion_hessian(law, gam)
        assert ev.hess_diag == pytest.approx(np.diag(hess), rel=1e-12)
        assert ev.hess_off == pytest.approx(np.diag(hess, 1), rel=1e-12)


@pytest.fixture(scope="module")
def seqs(gbm):
    return {s: rmq_run(gbm, s, 100.0, PAPER_SCHEDULE, "free")
            for s in ("euler", "milstein", "weak2")}


class TestRmqRunGbm:
    def test_terminal_first_moment(self, seqs):
        for scheme, seq in seqs.items():
            assert seq.terminal_mean() == pytest.approx(GBM_MEAN_1Y,
                                                        rel=2e-3), scheme

    def test_markov_consistency(self, seqs):
        for seq in seqs.values():
            p = seq.probabilities[0]
            for k in range(1, seq.n_steps):
                p = p @ seq.transitions[k - 1]
                assert np.max(np.abs(p - seq.probabilities[k])) < 1e-10

    def test_row_stochastic(self, seqs):
        for seq in seqs.values():
            for P in seq.transitions:
                assert P.sum(axis=1) == pytest.approx(
                    np.ones(P.shape[0]), abs=1e-10)
                assert np.all(P >= 0.0) and np.all(P <= 1.0 + 1e-12)

    def test_implied_cdf_monotone_with_limits(self, seqs, gbm):
        seq = seqs["weak2"]
        prev, zm = seq.live_quantizer(seq.n_steps - 1)
        ups = SCHEME_BUILDERS["weak2"](gbm, prev.codewords, seq.dt)
        x = np.linspace(1.0, 400.0, 1000)
        F = implied_marginal_cdf(x, prev, ups)
        assert np.all(np.diff(F) >= -1e-12)
        assert implied_marginal_cdf(1e9, prev, ups) == pytest.approx(1.0, abs=1e-9)

    def test_first_moment_telescoping_milstein(self, seqs, gbm):
        seq = seqs["milstein"]
        dt = seq.dt
        for k in range(1, seq.n_steps):
            lhs = seq.probabilities[k] @ seq.codewords[k]
            gam = seq.codewords[k - 1]
            rhs = seq.probabilities[k - 1] @ (gam + gbm.a(gam) * dt)
            assert lhs == pytest.approx(rhs, rel=1e-3)

    def test_distortion_not_worse_than_initial_guess(self, seqs, gbm):
        seq = seqs["milstein"]
        k = 6  # mid-run step; guess for step k+1 is the step-k grid
        prev, _ = seq.live_quantizer(k)
        ups = SCHEME_BUILDERS["milstein"](gbm, prev.codewords, seq.dt)
        d_guess = mixture_distortion(seq.codewords[k - 1], prev, ups)
        d_final = mixture_distortion(seq.codewords[k], prev, ups)
        assert d_final <= d_guess * (1.0 + 1e-12)

    def test_single_step_recovers_plain_quantization(self, gbm):
        # K=1 must be exactly the one-step conditional-law quantization
        sched = Schedule(T=1.0 / 12.0, K=1, n_per_step=40)
        seq = rmq_run(gbm, "euler", 100.0, sched, "free")
        u = euler_updates(gbm, np.array([100.0]), sched.dt)
        m, c = float(u.m[0]), float(u.c[0])
        law = ScalarDistribution(
            pdf=lambda x: norm_pdf((x - c) / m) / m,
            cdf=lambda x: norm_cdf((x - c) / m),
            m1=lambda x: c * norm_cdf((x - c) / m) + m * norm_m1((x - c) / m),
        )
        from rmquant.vq1d import initial_guess
        q = newton_quantize(law, np.sort(m * initial_guess("normal", 40) + c),
                            sched.n_max_vq)
        assert seq.codewords[0] == pytest.approx(q.codewords, rel=1e-9)
        assert seq.probabilities[0] == pytest.approx(q.probabilities, abs=1e-10)

    def test_scheme_agreement_at_fine_steps(self, gbm):
        sched = Schedule(T=1.0, K=192, n_per_step=200)
        means = []
        for scheme in ("euler", "milstein", "weak2"):
            seq = rmq_run(gbm, scheme, 100.0, sched, "free")
            means.append(seq.terminal_mean())
        for m in means:
            assert m == pytest.approx(GBM_MEAN_1Y, rel=1e-2)
        assert max(means) - min(means) < 1e-2 * GBM_MEAN_1Y

    def test_variable_cardinality_schedule(self, gbm):
        sched = Schedule(T=0.5, K=3, n_per_step=[20, 35, 50])
        seq = rmq_run(gbm, "euler", 100.0, sched, "free")
        assert [cw.size for cw in seq.codewords] == [20, 35, 50]
        assert seq.transitions[0].shape == (20, 35)
        assert seq.transitions[1].shape == (35, 50)
        for k, p in enumerate(seq.probabilities):
            assert abs(p.sum() - 1.0) < 1e-10, k

    def test_negative_scale_rows_supported_in_free_mode(self):
        # a mixture whose second component has m < 0 must still produce a
        # stochastic transition matrix and a finite-difference-consistent
        # gradient (exercised structurally by models with b' < 0)
        prev = Quantizer(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        ups = [AffineUpdate(0.7, 1.1, InnovationLaw("gaussian")),
               AffineUpdate(-0.6, 2.2, InnovationLaw("gaussian"))]
        gam = np.array([0.6, 1.4, 2.3])
        ts = transition_set(prev, ups, gam)
        assert ts.P.sum(axis=1) == pytest.approx(np.ones(2), abs=1e-12)
        out = rmq_newton_step(gam, prev, ups)
        assert np.all(np.diff(out) > 0)


class TestBoundaryModes:
    SCHED = Schedule(T=1.0, K=12, n_per_step=100, n_max_vq=50, n_max_rmq=5)

    def test_cev_free_mode_fails_with_step_diagnostic(self, cev_low_alpha):
        with pytest.raises(CodewordDomainError) as exc:
            rmq_run(cev_low_alpha, "euler", CEV_LOW_ALPHA.s0, self.SCHED, "free")
        assert exc.value.step >= 1
        assert "step" in str(exc.value)
        assert "boundary" in str(exc.value)

    @pytest.mark.parametrize("scheme", ["euler", "milstein", "weak2"])
    def test_cev_absorbing(self, cev_low_alpha, scheme):
        seq = rmq_run(cev_low_alpha, scheme, CEV_LOW_ALPHA.s0, self.SCHED,
                      "absorbing")
        zm = seq.zero_state_mass
        assert zm is not None and np.all(np.diff(zm) >= -1e-15)
        for k in range(seq.n_steps):
            cw = seq.codewords[k]
            assert cw[0] == 0.0 and np.all(cw[1:] > 0.0)
            assert abs(seq.probabilities[k].sum() - 1.0) < 1e-10
            assert seq.probabilities[k][0] == pytest.approx(zm[k])
        for P in seq.transitions:
            assert P[0, 0] == 1.0 and np.all(P[0, 1:] == 0.0)
            assert P.sum(axis=1) == pytest.approx(np.ones(P.shape[0]),
                                                  abs=1e-10)

    @pytest.mark.parametrize("scheme", ["euler", "milstein", "weak2"])
    def test_cev_reflecting(self, cev_low_alpha, scheme):
        seq = rmq_run(cev_low_alpha, scheme, CEV_LOW_ALPHA.s0, self.SCHED,
                      "reflecting")
        assert seq.zero_state_mass is None
        for k in range(seq.n_steps):
            assert np.all(seq.codewords[k] > 0.0)
            assert abs(seq.probabilities[k].sum() - 1.0) < 1e-10

    def test_gbm_absorbing_mass_is_negligible(self, gbm):
        seq = rmq_run(gbm, "euler", 100.0, self.SCHED, "absorbing")
        assert seq.zero_state_mass[-1] < 1e-8

    def test_boundary_modes_reject_nonpositive_scale(self):
        prev = Quantizer(np.array([1.0]), np.array([1.0]))
        ups = [AffineUpdate(-1.0, 1.0, InnovationLaw("gaussian"))]
        from rmquant import RmqError
        with pytest.raises(RmqError):
            transition_set(prev, ups, np.array([1.0]), "absorbing")


class TestSerialization:
    def test_json_round_trip_prices_identically(self, gbm):
        from rmquant import VanillaPayoff, bermudan_price, barrier_up_out_price
        from rmquant import BarrierSpec
        sched = Schedule(T=1.0, K=6, n_per_step=60)
        seq = rmq_run(gbm, "weak2", 100.0, sched, "free")
        buf = io.StringIO()
        seq.dump_json(buf)
        buf.seek(0)
        seq2 = load_sequence_json(buf)
        payoff = VanillaPayoff("put", 100.0)
        for fn in (lambda s: european_price(s, payoff, 0.05),
                   lambda s: bermudan_price(s, payoff, 0.05),
                   lambda s: barrier_up_out_price(
                       s, payoff, BarrierSpec(level=120.0), 0.05)):
            assert abs(fn(seq) - fn(seq2)) <= 1e-12

    def test_csv_grid_dump_round_trips_final_step(self, gbm):
        sched = Schedule(T=1.0, K=3, n_per_step=25)
        seq = rmq_run(gbm, "euler", 100.0, sched, "free")
        buf = io.StringIO()
        seq.dump_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("# schema:")
        assert lines[1] == "step,time,index,codeword,probability"
        rows = [ln.split(",") for ln in lines[2:]]
        assert len(rows) == 3 * 25
        last = [r for r in rows if r[0] == "3"]
        cw = np.array([float(r[3]) for r in last])
        pr = np.array([float(r[4]) for r in last])
        assert np.array_equal(cw, seq.codewords[-1])   # 17g round-trips
        assert np.array_equal(pr, seq.probabilities[-1])
        from rmquant import VanillaPayoff
        reprice = np.exp(-0.05) * pr @ np.maximum(100.0 - cw, 0.0)
        assert abs(reprice - european_price(seq, VanillaPayoff("put", 100.0),
                                            0.05)) <= 1e-12

    def test_json_schema_enforced(self):
        with pytest.raises(ValueError):
            load_sequence_json(io.StringIO(json.dumps({"schema": "other"})))
