import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ive

from junctionflow import comparison as cp

SQRT2 = math.sqrt(2.0)


def closed_psi1_d1(c, qbar, L, rs):
    # cosh(cr)/cosh(cL) written with exponentials so large cL stays finite
    rs = np.asarray(rs, float)
    num = np.exp(c * (rs - L)) + np.exp(-c * (rs + L))
    den = 1.0 + np.exp(-2.0 * c * L)
    return qbar * num / den


def closed_psi1_d3(c, qbar, L, rs):
    # (L/r) sinh(cr)/sinh(cL), with the r -> 0 limit filled in
    rs = np.asarray(rs, float)
    num = np.exp(c * (rs - L)) - np.exp(-c * (rs + L))
    den = 1.0 - np.exp(-2.0 * c * L)
    out = np.empty_like(rs)
    pos = rs > 0
    out[pos] = qbar * (L / rs[pos]) * num[pos] / den
    out[~pos] = qbar * 2.0 * c * L * np.exp(-c * L) / den
    return out


class TestCoreProfile:
    def test_d1_matches_cosh_closed_form(self):
        p = cp.solve_psi1(SQRT2, 0.3, 5.0, 1)
        rs = np.linspace(0.0, 5.0, 97)
        err = np.abs(p.value(rs) - closed_psi1_d1(SQRT2, 0.3, 5.0, rs)).max()
        assert err <= 1e-9
        dclosed = SQRT2 * 0.3 * np.sinh(SQRT2 * rs) / np.cosh(SQRT2 * 5.0)
        assert np.abs(p.deriv(rs) - dclosed).max() <= 1e-8

    def test_d3_matches_sinh_closed_form(self):
        p = cp.solve_psi1(1.5, 0.4, 6.0, 3)
        rs = np.linspace(0.0, 6.0, 97)
        err = np.abs(p.value(rs) - closed_psi1_d3(1.5, 0.4, 6.0, rs)).max()
        assert err <= 1e-8

    def test_d2_matches_bessel_closed_form(self):
        p = cp.solve_psi1(1.8, 0.35, 7.0, 2)
        rs = np.linspace(0.0, 7.0, 97)
        closed = 0.35 * ive(0, 1.8 * rs) / ive(0, 1.8 * 7.0) * np.exp(1.8 * (rs - 7.0))
        assert np.abs(p.value(rs) - closed).max() <= 1e-8
        dclosed = 1.8 * 0.35 * ive(1, 1.8 * rs) / ive(0, 1.8 * 7.0) * np.exp(1.8 * (rs - 7.0))
        assert np.abs(p.deriv(rs) - dclosed).max() <= 1e-8

    def test_d1_edge_slope_saturates(self):
        p = cp.solve_psi1(1.0, 0.3, 10.0, 1)
        assert float(p.deriv(10.0)) == pytest.approx(0.3 * math.tanh(10.0), abs=1e-9)

    def test_d3_edge_slope_ratio(self):
        c, qbar, L = 1.5, 0.4, 6.0
        p = cp.solve_psi1(c, qbar, L, 3)
        ratio = float(p.deriv(L)) / (c * qbar)
        expect = 1.0 / math.tanh(c * L) - 1.0 / (c * L)
        assert ratio == pytest.approx(expect, abs=1e-8)

    def test_edge_slope_band_for_large_decay_products(self):
        # the edge slope approaches c*qbar from below as c*L grows; at
        # c*L = 50 both odd effective dimensions sit within 3% of it
        for d_eff in (1, 3):
            p = cp.solve_psi1(5.0, 0.3, 10.0, d_eff)
            ratio = float(p.deriv(10.0)) / (5.0 * 0.3)
            assert 0.97 <= ratio <= 1.03

    def test_small_c_limit_is_constant(self):
        p = cp.solve_psi1(1e-3, 0.3, 10.0, 2)
        rs = np.linspace(0.0, 10.0, 50)
        assert np.abs(p.value(rs) - 0.3).max() <= 1e-4
        assert abs(float(p.deriv(10.0))) <= 1e-5

    def test_large_decay_product_rescaled(self):
        c, L = SQRT2, 400.0
        p = cp.solve_psi1(c, 0.3, L, 1)
        assert np.isfinite(p.values).all() and np.isfinite(p.derivs).all()
        assert float(p.value(L)) == pytest.approx(0.3, abs=1e-9)
        assert float(p.deriv(L)) / (c * 0.3) == pytest.approx(1.0, abs=1e-6)
        tail = float(p.value(L - 5.0)) / closed_psi1_d1(c, 0.3, L, L - 5.0)
        assert tail == pytest.approx(1.0, abs=1e-6)

    def test_refinement_halving_step(self):
        base = cp.solve_psi1(2.0, 0.3, 7.0, 3)
        fine = cp.solve_psi1(2.0, 0.3, 7.0, 3, n_steps=20_000)
        rs = np.linspace(0.0, 7.0, 311)
        assert np.abs(base.value(rs) - fine.value(rs)).max() <= 1e-8

    def test_monotone_and_convex_d1(self):
        p = cp.solve_psi1(SQRT2, 0.3, 5.0, 1)
        assert np.diff(p.values).min() >= -1e-15
        second = np.diff(p.values, 2)
        assert second.min() >= -1e-15

    def test_extension_keeps_edge_normalization(self):
        p = cp.solve_psi1(SQRT2, 0.3, 5.0, 1, r_max=6.0)
        assert float(p.value(5.0)) == pytest.approx(0.3, abs=1e-12)
        assert p.interval == (0.0, 5.0)
        assert p.r[-1] <= 5.0 + 1e-9
        # the evaluator keeps tracking the closed form past the interval
        err = abs(float(p.value(5.7)) - closed_psi1_d1(SQRT2, 0.3, 5.0, 5.7))
        assert err <= 1e-9

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.2, 3.0), st.floats(2.0, 9.0))
    def test_closed_form_agreement_random(self, c, L):
        p = cp.solve_psi1(c, 0.3, L, 1)
        rs = np.linspace(0.0, L, 31)
        assert np.abs(p.value(rs) - closed_psi1_d1(c, 0.3, L, rs)).max() <= 1e-9

    def test_rejects_bad_parameters(self):
        with pytest.raises(cp.ComparisonError, match="positive"):
            cp.solve_psi1(0.0, 0.3, 5.0, 1)
        with pytest.raises(cp.ComparisonError, match="positive"):
            cp.solve_psi1(1.0, -0.3, 5.0, 1)
        with pytest.raises(cp.ComparisonError, match="d_eff"):
            cp.solve_psi1(1.0, 0.3, 5.0, 4)
        with pytest.raises(cp.ComparisonError, match="r_max"):
            cp.solve_psi1(1.0, 0.3, 5.0, 1, r_max=4.0)


class TestCollarProfile:
    def test_d3_example_slope(self):
        p = cp.solve_psi2(0.3, 1.5, 10.0, 10.0, 3)
        assert float(p.deriv(10.0)) == pytest.approx(0.24, abs=1e-12)

    def test_d1_is_a_line(self):
        p = cp.solve_psi2(0.3, 1.7, 4.0, 2.0, 1)
        rs = np.linspace(4.0, 6.0, 50)
        line = 0.3 + (1.7 - 0.3) * (rs - 4.0) / 2.0
        assert np.abs(p.value(rs) - line).max() <= 1e-12
        assert float(p.deriv(4.0)) == pytest.approx(0.7, abs=1e-12)

    def test_d2_log_closed_form(self):
        p = cp.solve_psi2(0.3, 1.5, 5.0, 5.0, 2)
        B = (1.5 - 0.3) / math.log(2.0)
        A = 0.3 - B * math.log(5.0)
        rs = np.linspace(5.0, 10.0, 50)
        assert np.abs(p.value(rs) - (A + B * np.log(rs))).max() <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(
        st.floats(0.05, 1.0),
        st.floats(0.1, 3.0),
        st.floats(1.0, 20.0),
        st.floats(0.5, 20.0),
        st.sampled_from([1, 2, 3]),
    )
    def test_two_sided_slope_bound(self, qbar, gap, L, l, d_eff):
        b = qbar + gap
        p = cp.solve_psi2(qbar, b, L, l, d_eff)
        slope = float(p.deriv(L))
        lo = (b - qbar) / l
        hi = (b - qbar) * (L + l) ** (d_eff - 1) / (l * L ** (d_eff - 1))
        assert lo - 1e-12 <= slope <= hi + 1e-12

    def test_endpoints_and_monotone(self):
        p = cp.solve_psi2(0.3, 1.5, 10.0, 10.0, 3)
        assert float(p.value(10.0)) == pytest.approx(0.3, abs=1e-12)
        assert float(p.value(20.0)) == pytest.approx(1.5, abs=1e-12)
        assert np.diff(p.values).min() >= -1e-15

    def test_rejects_bad_parameters(self):
        with pytest.raises(cp.ComparisonError, match="exceed"):
            cp.solve_psi2(0.3, 0.2, 10.0, 10.0, 3)
        with pytest.raises(cp.ComparisonError, match="positive"):
            cp.solve_psi2(0.3, 1.5, -1.0, 10.0, 3)
        with pytest.raises(cp.ComparisonError, match="d_eff"):
            cp.solve_psi2(0.3, 1.5, 10.0, 10.0, 0)


@pytest.fixture(scope="module")
def pair_d1():
    core = cp.solve_psi1(SQRT2, 0.3, 5.0, 1, r_max=6.0)
    collar = cp.solve_psi2(0.3, 1.7, 5.0, 5.0, 1)
    return core, collar


@pytest.fixture(scope="module")
def rep_d1():
    return cp.step2_report(SQRT2, 0.3, 1.7, 1)


class TestBridgeProfile:
    def test_d1_chord_slope(self, pair_d1):
        core, collar = pair_d1
        delta = 0.25
        bridge = cp.solve_psi3(core, collar, 5.0, delta, 1)
        chord = (float(collar.value(5.0 - delta)) - float(core.value(5.0 - delta))) / (2 * delta)
        assert float(bridge.deriv(5.0)) == pytest.approx(chord, abs=1e-12)

    def test_boundary_values_read_at_inner_edge(self, pair_d1):
        core, collar = pair_d1
        bridge = cp.solve_psi3(core, collar, 5.0, 0.25, 1)
        assert float(bridge.value(4.75)) == pytest.approx(float(core.value(4.75)), abs=1e-12)
        assert float(bridge.value(5.25)) == pytest.approx(float(collar.value(4.75)), abs=1e-12)

    def test_shrinking_width_recovers_difference_quotient(self):
        # halving the half-width shrinks the gap between the bridge slope
        # and the boundary difference quotient at second order
        core = cp.solve_psi1(1.2, 0.3, 5.0, 3, r_max=6.0)
        collar = cp.solve_psi2(0.3, 1.4, 5.0, 5.0, 3)
        errs = []
        for delta in (0.2, 0.1, 0.05):
            bridge = cp.solve_psi3(core, collar, 5.0, delta, 3)
            quot = (float(collar.value(5.0 - delta)) - float(core.value(5.0 - delta))) / (2 * delta)
            errs.append(abs(float(bridge.deriv(5.0)) - quot))
        assert errs[1] <= errs[0] / 3.0
        assert errs[2] <= errs[1] / 3.0

    def test_monotone_when_core_outpaces_collar(self, pair_d1):
        core, collar = pair_d1
        bridge = cp.solve_psi3(core, collar, 5.0, 0.25, 1)
        assert np.diff(bridge.values).min() >= -1e-15

    def test_rejects_bad_width(self, pair_d1):
        core, collar = pair_d1
        with pytest.raises(cp.ComparisonError, match="delta"):
            cp.solve_psi3(core, collar, 5.0, 0.0, 1)
        with pytest.raises(cp.ComparisonError, match="delta"):
            cp.solve_psi3(core, collar, 5.0, 5.0, 1)


class TestConstantsSearch:
    def test_double_well_bundle(self):
        L0, delta, margin = cp.find_step2_constants(SQRT2, 0.3, 1.7, 1)
        target = 0.25 * SQRT2 * 0.3
        assert np.isfinite(L0) and np.isfinite(delta)
        assert 0.0 < delta < L0
        assert margin >= target
        assert 15.0 < L0 < 26.0  # search lands at 20.5

    def test_planar_bundle(self):
        L0, delta, margin = cp.find_step2_constants(2.4, 0.3, 1.9, 2)
        assert margin >= 0.25 * 2.4 * 0.3
        assert 15.0 < L0 < 26.0  # search lands at 20.7

    def test_triple_well_bundle_margins(self):
        c, qbar, b = math.sqrt(6.0), 0.3, math.sqrt(3.0)
        L0, delta, margin = cp.find_step2_constants(c, qbar, b, 2)
        assert np.isfinite(L0)
        assert margin >= 0.25 * c * qbar

    def test_chains_hold_pointwise_at_found_constants(self):
        c, qbar, b, d_eff = 2.4, 0.3, 1.9, 2
        L0, delta, margin = cp.find_step2_constants(c, qbar, b, d_eff)
        core = cp.solve_psi1(c, qbar, L0, d_eff, r_max=L0 + delta)
        collar = cp.solve_psi2(qbar, b, L0, L0, d_eff)
        bridge = cp.solve_psi3(core, collar, L0, delta, d_eff)
        rs = np.linspace(L0 - delta, L0 + delta, 201)
        target = 0.25 * c * qbar
        steep = (core.deriv(rs) - bridge.deriv(rs)).min()
        shallow = (bridge.deriv(rs) - collar.deriv(rs)).min()
        assert min(steep, shallow) >= target - 1e-9

    def test_brackets_downward_when_start_is_workable(self):
        # steep decay with a modest far value is workable well below the
        # default starting length, so the search must shrink the bracket
        L0, delta, margin = cp.find_step2_constants(50.0, 0.3, 0.5, 1)
        assert L0 < max(1.0 / 50.0, 0.3)
        assert margin >= 0.25 * 50.0 * 0.3

    def test_vanishing_decay_rate_is_inconsistent(self):
        with pytest.raises(cp.ComparisonError, match="inconsistent"):
            cp.find_step2_constants(1e-6, 0.3, 1.7, 1)

    def test_rejects_bad_parameters(self):
        with pytest.raises(cp.ComparisonError, match="lam"):
            cp.find_step2_constants(SQRT2, 0.3, 1.7, 1, lam=0.6)
        with pytest.raises(cp.ComparisonError, match="exceed"):
            cp.find_step2_constants(SQRT2, 0.3, 0.1, 1)
        with pytest.raises(cp.ComparisonError, match="d_eff"):
            cp.find_step2_constants(SQRT2, 0.3, 1.7, 5)


class TestReportAndIO:
    def test_report_carries_search_results(self, rep_d1):
        assert rep_d1["margin"] >= rep_d1["target"]
        assert min(rep_d1["margin_core_over_bridge"],
                   rep_d1["margin_bridge_over_collar"]) >= rep_d1["target"]
        assert rep_d1["d_eff"] == 1 and rep_d1["lambda"] == 0.25

    def test_bridge_stays_strictly_under_cap_value(self, rep_d1):
        assert rep_d1["bridge_max"] < 0.3

    def test_value_ceiling_documented_at_default_slack(self, rep_d1):
        # at the smallest workable length the collar slope is pinned below
        # (2/3) * lam * c * qbar by the shallow chain, while the ceiling
        # asks for (1/2 - lam) * c * qbar; the window is empty until
        # lam reaches 0.3, so the default documents the gap
        assert rep_d1["sandwich_holds"] is False
        assert rep_d1["bridge_max"] > rep_d1["bridge_cap"]

    def test_value_ceiling_attained_with_more_slack(self):
        rep = cp.step2_report(SQRT2, 0.3, 1.7, 1, lam=0.35)
        assert rep["sandwich_holds"] is True
        assert rep["bridge_max"] <= rep["bridge_cap"]
        assert rep["margin"] >= rep["target"]

    def test_save_constants_round_trip(self, rep_d1, tmp_path):
        out = cp.save_constants(rep_d1, tmp_path / "constants.json")
        loaded = json.loads(out.read_text())
        assert loaded == rep_d1

    def test_save_profile_csv(self, tmp_path):
        p = cp.solve_psi2(0.3, 1.5, 10.0, 10.0, 3)
        out = cp.save_profile(p, tmp_path / "collar.csv")
        table = np.loadtxt(out, delimiter=",")
        assert table.shape == (p.r.size, 3)
        assert np.array_equal(table[:, 0], p.r)
        assert np.array_equal(table[:, 1], p.values)
        assert np.array_equal(table[:, 2], p.derivs)
        header = out.read_text().splitlines()[0]
        assert header.lstrip("# ") == "r,psi,dpsi"

    def test_samples_agree_with_evaluators(self):
        for p in (
            cp.solve_psi1(1.5, 0.4, 6.0, 3),
            cp.solve_psi2(0.3, 1.5, 5.0, 5.0, 2),
        ):
            assert np.abs(p.value(p.r) - p.values).max() <= 1e-12
            assert np.abs(p.deriv(p.r) - p.derivs).max() <= 1e-12


class TestFlowCrossCheck:
    def test_release_succeeds_beyond_found_length(self):
        from junctionflow import coxeter as cx
        from junctionflow import flow as fl
        from junctionflow import potential as pt

        L0, _, _ = cp.find_step2_constants(SQRT2, 0.3, 1.7, 1)
        W = pt.builtin_potential("double-well-1d")
        G = cx.builtin_group("Z2-line")
        D = cx.region_D(G, W.a1)
        Q = pt.radial_q(W.a1)
        cfg = fl.default_config(W, D, R=84.0, h=0.02, qbar=0.3, dt=0.02,
                                stepper="semi-implicit", tol_residual=1e-8)
        assert cfg.L >= L0
        solved = fl.solve_constrained(cfg, W, Q, G, D)
        released = fl.release_and_flow(solved, cfg, W, G)
        assert released.converged
        assert released.constraint_active_final is False
