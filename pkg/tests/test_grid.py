import math

import numpy as np
import pytest

from junctionflow import coxeter as cx
from junctionflow import grid as gr


@pytest.fixture(scope="module")
def g2():
    return gr.build_grid(2, 8.0, 0.25)


class TestBuildGrid:
    def test_counts_and_flags(self, g2):
        assert g2.n_nodes == g2.nodes.shape[0]
        assert g2.neighbors.shape == (4, g2.n_nodes)
        assert (np.linalg.norm(g2.nodes, axis=1) <= 8.0 + 1e-9).all()

    def test_interior_has_all_neighbors(self, g2):
        own = np.arange(g2.n_nodes)
        has_all = (g2.neighbors != own[None, :]).all(axis=0)
        assert (g2.interior == has_all).all()

    def test_origin_is_a_node(self, g2):
        d = np.linalg.norm(g2.nodes, axis=1)
        assert d.min() == 0.0

    def test_resolution_floor(self):
        with pytest.raises(gr.GridError, match="resolution"):
            gr.build_grid(2, 4.0, 1.0)

    def test_dim_guard(self):
        with pytest.raises(gr.GridError):
            gr.build_grid(4, 8.0, 0.5)

    def test_symmetric_under_axis_flip(self, g2):
        flipped = g2.nodes * np.array([-1.0, 1.0])
        key = {tuple(np.round(p, 9)) for p in g2.nodes}
        assert all(tuple(np.round(p, 9)) in key for p in flipped)


class TestLaplacian:
    def test_constant_is_zero(self, g2):
        f = gr.Field(g2, np.full((g2.n_nodes, 2), 3.7))
        assert np.abs(gr.laplacian(f).values).max() == 0.0

    @pytest.mark.parametrize("dim,R,h", [(1, 8.0, 0.5), (2, 8.0, 0.5), (3, 8.0, 0.5)])
    def test_quadratic_interior(self, dim, R, h):
        g = gr.build_grid(dim, R, h)
        f = gr.Field(g, (g.nodes ** 2).sum(axis=1))
        lap = gr.laplacian(f).values[g.interior, 0]
        assert np.abs(lap - 2 * dim).max() <= 1e-10

    def test_linear_interior_exact_zero(self, g2):
        # h = 0.25 makes coordinates dyadic, so unit-coefficient linears
        # cancel exactly; generic coefficients cancel to rounding noise
        f = gr.Field(g2, g2.nodes[:, 0] - g2.nodes[:, 1])
        assert np.abs(gr.laplacian(f).values[g2.interior]).max() == 0.0
        f = gr.Field(g2, 0.3 * g2.nodes[:, 0] - 1.7 * g2.nodes[:, 1] + 0.2)
        assert np.abs(gr.laplacian(f).values[g2.interior]).max() <= 1e-11

    def test_1d_right_boundary_ghost(self):
        g = gr.build_grid(1, 10.0, 0.5)
        f = gr.Field(g, g.nodes[:, 0].copy())
        lap = gr.laplacian(f)
        i_right = int(np.argmax(g.nodes[:, 0]))
        # ghost = own value, so the stencil sees only the inner gap of h
        assert lap.values[i_right, 0] == pytest.approx(-1.0 / 0.5)
        i_left = int(np.argmin(g.nodes[:, 0]))
        assert lap.values[i_left, 0] == pytest.approx(+1.0 / 0.5)

    def test_summation_by_parts(self):
        g = gr.build_grid(2, 8.0, 0.5)
        rng = np.random.default_rng(11)
        for _ in range(10):
            v = rng.normal(size=(g.n_nodes, 2))
            f = gr.Field(g, v)
            s = float(np.einsum("ij,ij->", gr.laplacian(f).values, v))
            assert s <= 1e-9 * g.n_nodes


class TestField:
    def test_rejects_nonfinite(self, g2):
        v = np.zeros((g2.n_nodes, 2))
        v[5, 1] = np.inf
        with pytest.raises(gr.GridError, match="non-finite"):
            gr.Field(g2, v)

    def test_rejects_wrong_length(self, g2):
        with pytest.raises(gr.GridError):
            gr.Field(g2, np.zeros((17, 2)))

    def test_scalar_promotes_to_column(self, g2):
        f = gr.Field(g2, np.zeros(g2.n_nodes))
        assert f.values.shape == (g2.n_nodes, 1)


class TestSampleRay:
    def test_constant_field(self, g2):
        f = gr.Field(g2, np.full((g2.n_nodes, 2), 2.5))
        vals, ok = gr.sample_ray(f, [0.6, 0.8], np.linspace(0, 7.9, 23))
        assert ok.all()
        assert np.abs(vals - 2.5).max() <= 1e-12

    def test_identity_field(self, g2):
        f = gr.Field(g2, g2.nodes.copy())
        d = np.array([math.cos(0.3), math.sin(0.3)])
        vals, ok = gr.sample_ray(f, d, [1.0])
        assert ok[0]
        assert np.abs(vals[0] - d).max() <= g2.h ** 2

    def test_node_positions_exact(self, g2):
        f = gr.Field(g2, np.sin(g2.nodes[:, :1] * 2.0))
        pick = np.random.default_rng(0).choice(g2.n_nodes, 200, replace=False)
        vals, ok = gr.interpolate(f, g2.nodes[pick])
        assert ok.all()
        assert np.abs(vals[:, 0] - f.values[pick, 0]).max() == 0.0

    def test_outside_clipped_and_flagged(self, g2):
        f = gr.Field(g2, g2.nodes.copy())
        vals, ok = gr.sample_ray(f, [1.0, 0.0], [7.0, 8.4])
        assert ok[0] and not ok[1]
        assert np.isfinite(vals).all()

    def test_zero_direction_rejected(self, g2):
        f = gr.Field(g2, g2.nodes.copy())
        with pytest.raises(gr.GridError):
            gr.sample_ray(f, [0.0, 0.0], [1.0])


class TestWallDistances:
    def test_sector_examples(self, g2):
        D = cx.region_D(cx.builtin_group("dihedral-3"), np.array([1.0, 0.0]))
        nd = gr.node_wall_distances(g2, D)
        i0 = int(np.argmin(np.linalg.norm(g2.nodes, axis=1)))
        assert nd[i0] == 0.0
        imid = int(np.argmin(np.linalg.norm(g2.nodes - [4.0, 0.0], axis=1)))
        assert nd[imid] == pytest.approx(4.0 * math.sqrt(3) / 2, rel=1e-12)

    def test_sphere_nodes_zero(self, g2):
        D = cx.region_D(cx.builtin_group("dihedral-3"), np.array([1.0, 0.0]))
        nd = gr.node_wall_distances(g2, D)
        r = np.linalg.norm(g2.nodes, axis=1)
        on_sphere = np.abs(r - 8.0) <= 1e-9
        if on_sphere.any():
            assert np.abs(nd[on_sphere]).max() <= 1e-9

    def test_outside_cone_zero(self, g2):
        D = cx.region_D(cx.builtin_group("dihedral-3"), np.array([1.0, 0.0]))
        nd = gr.node_wall_distances(g2, D)
        left = g2.nodes[:, 0] < -0.5
        assert np.abs(nd[left]).max() == 0.0


class TestSerialization:
    def test_roundtrip_bitexact(self, tmp_path):
        g = gr.build_grid(1, 6.0, 0.5)
        vals = np.stack([np.sin(g.nodes[:, 0]), np.cos(g.nodes[:, 0])], axis=1)
        f = gr.Field(g, vals)
        csv_path, json_path = gr.save_field(f, tmp_path / "probe")
        assert csv_path.exists() and json_path.exists()
        back = gr.load_field(tmp_path / "probe")
        assert np.array_equal(back.values, f.values)
        assert back.grid.n_nodes == g.n_nodes

    def test_header_contents(self, tmp_path):
        g = gr.build_grid(2, 8.0, 1.0)
        gr.save_field(gr.Field(g, np.zeros((g.n_nodes, 2))), tmp_path / "hdr")
        import json
        hdr = json.loads((tmp_path / "hdr.json").read_text())
        assert hdr == {"n": 2, "R": 8.0, "h": 1.0, "nodes": g.n_nodes, "components": 2}

    def test_mismatched_file_rejected(self, tmp_path):
        g = gr.build_grid(1, 6.0, 0.5)
        gr.save_field(gr.Field(g, np.zeros(g.n_nodes)), tmp_path / "bad")
        hdr = (tmp_path / "bad.json").read_text().replace("6.0", "7.0")
        (tmp_path / "bad.json").write_text(hdr)
        with pytest.raises(gr.GridError):
            gr.load_field(tmp_path / "bad")
