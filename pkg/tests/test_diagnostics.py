import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from junctionflow import coxeter as cx
from junctionflow import diagnostics as dg
from junctionflow import flow as fl
from junctionflow import grid as gr
from junctionflow import potential as pt


@pytest.fixture(scope="module")
def tw():
    W = pt.builtin_potential("triple-well-2d")
    G = cx.builtin_group("dihedral-3")
    D = cx.region_D(G, W.a1)
    return W, G, D, pt.radial_q(W.a1)


@pytest.fixture(scope="module")
def dw():
    W = pt.builtin_potential("double-well-1d")
    G = cx.builtin_group("Z2-line")
    D = cx.region_D(G, W.a1)
    return W, G, D, pt.radial_q(W.a1)


@pytest.fixture(scope="module")
def grid2(tw):
    return gr.build_grid(2, 8.0, 0.2)


@pytest.fixture(scope="module")
def pipe1d(dw):
    W, G, D, Q = dw
    cfg = fl.default_config(W, D, R=10.0, h=0.05, qbar=0.3, L=2.0, dt=0.02,
                            stepper="semi-implicit", tol_residual=1e-8)
    solved = fl.solve_constrained(cfg, W, Q, G, D)
    released = fl.release_and_flow(solved, cfg, W, G)
    return cfg, released


@pytest.fixture(scope="module")
def pipe2d(tw):
    W, G, D, Q = tw
    cfg = fl.default_config(W, D, R=8.0, h=0.2, qbar=0.3, max_steps=100_000)
    solved = fl.solve_constrained(cfg, W, Q, G, D)
    released = fl.release_and_flow(solved, cfg, W, G)
    return cfg, released


def scalar_extract():
    return pt.QFunction(
        q=lambda u: np.asarray(u, float)[..., 0],
        qgrad=lambda u: np.ones_like(np.asarray(u, float)),
        base=np.zeros(1),
    )


class TestAction:
    def test_constant_minimum_has_zero_action(self, tw, grid2):
        W, G, D, Q = tw
        f = gr.Field(grid2, np.tile(W.a1, (grid2.n_nodes, 1)))
        assert abs(dg.action(f, W)) <= 1e-12

    def test_heteroclinic_action(self, dw):
        W, G, D, Q = dw
        g = gr.build_grid(1, 10.0, 0.02)
        kink = gr.Field(g, np.tanh(g.nodes / math.sqrt(2.0)))
        assert dg.action(kink, W) == pytest.approx(2.0 * math.sqrt(2.0) / 3.0, abs=1e-3)

    def test_affine_seed_scaling_is_bounded(self, tw):
        W, G, D, Q = tw
        per_r = []
        for R in (8.0, 12.0, 16.0):
            g = gr.build_grid(2, R, 0.25)
            per_r.append(dg.action(fl.init_u_aff(g, D, W.a1), W) / R)
        assert max(per_r) / min(per_r) <= 1.5
        assert all(3.0 < v < 7.0 for v in per_r)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_action_is_nonnegative(self, a, b, c):
        W = pt.builtin_potential("triple-well-2d")
        g = gr.build_grid(2, 4.0, 0.5)
        x, y = g.nodes[:, 0], g.nodes[:, 1]
        vals = np.column_stack([np.sin(a * x + b * y), np.cos(c * x - y)])
        assert dg.action(gr.Field(g, vals), W) >= 0.0


class TestSubharmonicity:
    def test_constant_minimum_reports_zero(self, tw, grid2):
        W, G, D, Q = tw
        f = gr.Field(grid2, np.tile(W.a1, (grid2.n_nodes, 1)))
        check = dg.check_subharmonicity(f, Q, D, grid2)
        assert check.minimum == 0.0
        assert check.passed and not check.skipped

    def test_convex_composition_is_nonnegative(self, tw, grid2):
        W, G, D, Q = tw
        # |M x| is convex, so its stencil Laplacian cannot go negative
        M = np.array([[1.3, 0.4], [-0.2, 0.9]])
        f = gr.Field(grid2, W.a1 + grid2.nodes @ M.T)
        check = dg.check_subharmonicity(f, pt.radial_q(W.a1), cx.Cone((), "D"), grid2)
        assert not check.skipped
        assert check.minimum >= -1e-12
        assert check.passed

    def test_positivity_failure_skips_with_reason(self, tw, grid2):
        W, G, D, Q = tw
        f = gr.Field(grid2, -grid2.nodes.copy())
        check = dg.check_subharmonicity(f, Q, D, grid2)
        assert check.skipped and not check.passed
        assert check.minimum is None
        assert "positivity" in check.note

    def test_converged_junction_passes(self, tw, pipe2d):
        W, G, D, Q = tw
        cfg, released = pipe2d
        check = dg.check_subharmonicity(released.field, Q, D, released.field.grid)
        assert not check.skipped
        assert check.minimum >= -1e-4
        assert check.passed


class TestDecayFit:
    def test_exact_exponential_is_recovered(self, tw, grid2):
        W, G, D, Q = tw
        d = cx.wall_distances(D, grid2.nodes)[0]
        vals = (3.0 * np.exp(-2.0 * d))[:, None]
        fit = dg.fit_decay(gr.Field(grid2, vals), scalar_extract(), D, grid2, 0.5)
        assert fit.k == pytest.approx(2.0, abs=1e-10)
        assert fit.K == pytest.approx(3.0, abs=1e-10)
        assert fit.r2 == pytest.approx(1.0, abs=1e-10)
        assert fit.n_nodes >= 30
        assert fit.band[0] >= 0.5

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.3, 4.0), st.floats(0.05, 20.0))
    def test_any_exact_exponential_is_recovered(self, k, K):
        G = cx.builtin_group("dihedral-3")
        W = pt.builtin_potential("triple-well-2d")
        D = cx.region_D(G, W.a1)
        g = gr.build_grid(2, 8.0, 0.4)
        d = cx.wall_distances(D, g.nodes)[0]
        vals = (K * np.exp(-k * d))[:, None]
        fit = dg.fit_decay(gr.Field(g, vals), scalar_extract(), D, g, 0.4)
        assert fit.k == pytest.approx(k, rel=1e-8)
        assert fit.K == pytest.approx(K, rel=1e-8)
        assert fit.r2 >= 1.0 - 1e-10

    def test_too_few_nodes_is_an_error(self, tw, grid2):
        W, G, D, Q = tw
        d = cx.wall_distances(D, grid2.nodes)[0]
        vals = (3.0 * np.exp(-2.0 * d))[:, None]
        with pytest.raises(dg.DiagnosticsError, match="insufficient"):
            dg.fit_decay(gr.Field(grid2, vals), scalar_extract(), D, grid2, 7.9)

    def test_heteroclinic_rate(self, dw, pipe1d):
        W, G, D, Q = dw
        cfg, released = pipe1d
        f = released.field
        collar = dg.propagation_collar(f, Q, D, f.grid, cfg.qbar)
        fit = dg.fit_decay(f, Q, D, f.grid, collar + 2 * f.grid.h, qbar=cfg.qbar)
        assert fit.k == pytest.approx(math.sqrt(2.0), rel=0.05)
        assert fit.r2 >= 0.999
        assert fit.band[1] <= 0.9 * f.grid.R + 1e-9

    def test_junction_rate(self, tw, pipe2d):
        W, G, D, Q = tw
        cfg, released = pipe2d
        f = released.field
        collar = dg.propagation_collar(f, Q, D, f.grid, cfg.qbar)
        fit = dg.fit_decay(f, Q, D, f.grid, collar + 2 * f.grid.h, qbar=cfg.qbar)
        assert fit.k > 0.0
        assert fit.r2 >= 0.95
        assert fit.K <= 10.0 * cfg.qbar
        assert fit.n_nodes >= 30

    def test_scatter_csv_matches_fit_inputs(self, tw, pipe2d, tmp_path):
        W, G, D, Q = tw
        cfg, released = pipe2d
        f = released.field
        eta = dg.propagation_collar(f, Q, D, f.grid, cfg.qbar) + 2 * f.grid.h
        path = dg.save_decay_scatter(tmp_path / "scatter.csv", f, Q, D, f.grid,
                                     eta, qbar=cfg.qbar)
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        assert table.shape[1] == 3
        assert table.shape[0] >= 30
        d, q, logq = table.T
        assert np.abs(np.log(q) - logq).max() <= 1e-12
        assert d.min() >= eta
        assert q.min() >= 1e-8 and q.max() <= cfg.qbar


class TestConnection:
    def test_affine_seed_hits_every_minimum(self, tw, grid2):
        W, G, D, Q = tw
        orbit = cx.orbit_and_stabilizer(G, W.a1)
        ua = fl.init_u_aff(grid2, D, W.a1)
        assert dg.check_connection(ua, orbit, 0.7).max() <= 1e-12

    def test_zero_field_reads_full_distance(self, tw, grid2):
        W, G, D, Q = tw
        orbit = cx.orbit_and_stabilizer(G, W.a1)
        f0 = gr.Field(grid2, np.zeros((grid2.n_nodes, 2)))
        errs = dg.check_connection(f0, orbit, 0.7)
        assert errs.shape == (3,)
        assert errs == pytest.approx(np.linalg.norm(W.a1), abs=1e-12)

    def test_fraction_domain(self, tw, grid2):
        W, G, D, Q = tw
        orbit = cx.orbit_and_stabilizer(G, W.a1)
        ua = fl.init_u_aff(grid2, D, W.a1)
        for frac in (0.0, 1.0):
            with pytest.raises(dg.DiagnosticsError, match="lambda_frac"):
                dg.check_connection(ua, orbit, frac)

    def test_converged_junction_connects(self, tw, pipe2d):
        W, G, D, Q = tw
        cfg, released = pipe2d
        orbit = cx.orbit_and_stabilizer(G, W.a1)
        errs = dg.check_connection(released.field, orbit, 0.7)
        assert errs.shape == (3,)
        assert errs.max() <= 0.05


class TestCollar:
    def test_synthetic_profile_width(self, tw, grid2):
        W, G, D, Q = tw
        d = cx.wall_distances(D, grid2.nodes)[0]
        vals = (0.3 * np.exp(-(d - 1.0)))[:, None]
        w = dg.propagation_collar(gr.Field(grid2, vals), scalar_extract(), D,
                                  grid2, 0.3)
        assert w == pytest.approx(1.0, abs=0.05)

    def test_affine_seed_collar_is_inside_unit_band(self, tw, grid2):
        W, G, D, Q = tw
        ua = fl.init_u_aff(grid2, D, W.a1)
        w = dg.propagation_collar(ua, Q, D, grid2, 0.3)
        assert w <= 1.0
        # the seed ramps at unit rate, so the cap is cleared at 1 - qbar
        assert w == pytest.approx(0.7, abs=0.05)

    def test_width_is_stable_across_radii(self, tw):
        W, G, D, Q = tw
        widths = []
        for R in (8.0, 12.0):
            cfg = fl.default_config(W, D, R=R, h=0.25, qbar=0.3,
                                    max_steps=100_000)
            solved = fl.solve_constrained(cfg, W, Q, G, D)
            released = fl.release_and_flow(solved, cfg, W, G, polish=False)
            f = released.field
            widths.append(dg.propagation_collar(f, Q, D, f.grid, cfg.qbar))
        assert abs(widths[1] - widths[0]) <= 0.2 * widths[0]

    def test_clean_field_has_zero_width(self, tw, grid2):
        W, G, D, Q = tw
        f = gr.Field(grid2, np.tile(W.a1, (grid2.n_nodes, 1)))
        assert dg.propagation_collar(f, Q, D, grid2, 0.3) == 0.0


class TestReport:
    def test_junction_report_is_fully_populated(self, tw, pipe2d):
        W, G, D, Q = tw
        cfg, released = pipe2d
        rep = dg.build_report(released, W, G)
        assert rep.positivity_margin >= -1e-8
        assert rep.subharmonicity.passed
        assert rep.decay.k > 0.0 and rep.decay.r2 >= 0.95
        assert rep.decay.band[0] >= rep.collar_width + 2 * released.field.grid.h - 1e-9
        assert rep.action == pytest.approx(28.7048, abs=1e-3)
        assert rep.connection_errors.max() <= 0.05
        assert 0.3 <= rep.collar_width <= 1.5

    def test_heteroclinic_report(self, dw, pipe1d):
        W, G, D, Q = dw
        cfg, released = pipe1d
        rep = dg.build_report(released, W, G)
        assert rep.decay.k == pytest.approx(math.sqrt(2.0), rel=0.05)
        assert rep.action == pytest.approx(2.0 * math.sqrt(2.0) / 3.0, abs=1e-3)
        assert rep.connection_errors.shape == (2,)
        assert rep.connection_errors.max() <= 1e-3
        assert rep.positivity_margin >= -1e-10
        assert rep.subharmonicity.passed

    def test_unconverged_result_is_rejected(self, tw, pipe2d):
        W, G, D, Q = tw
        cfg, released = pipe2d
        broken = dataclasses.replace(released, converged=False)
        with pytest.raises(dg.DiagnosticsError, match="converged"):
            dg.build_report(broken, W, G)

    def test_report_serializes_to_one_json_document(self, tw, pipe2d, tmp_path):
        W, G, D, Q = tw
        cfg, released = pipe2d
        rep = dg.build_report(released, W, G)
        path = dg.save_report(rep, tmp_path / "report.json")
        doc = json.loads(path.read_text())
        assert doc == dg.report_to_dict(rep)
        assert sorted(doc) == ["action", "collar_width", "connection_errors",
                               "decay", "positivity_margin", "subharmonicity"]
        assert len(doc["connection_errors"]) == 3
        assert doc["decay"]["n_nodes"] >= 30
