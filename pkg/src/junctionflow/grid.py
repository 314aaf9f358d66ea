"""Uniform lattice on the ball |x| <= R with Neumann-compatible stencils.

Nodes are the points of the h-lattice of [-R, R]^n (always including the
origin) that fall inside the closed ball.  Each node carries 2n neighbor
slots; a slot whose lattice neighbor is outside the mask points back at the
node itself, which makes the ghost value equal the node value.  That choice
realizes zero normal flux to first order and keeps the difference operator
exactly symmetric, so summation by parts holds with no boundary remainder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import coxeter, kernels


class GridError(Exception):
    pass


@dataclass(frozen=True)
class Grid:
    dim: int
    R: float
    h: float
    nodes: np.ndarray        # (m, dim) positions
    neighbors: np.ndarray    # (2*dim, m) node indices; self where missing
    interior: np.ndarray     # (m,) True when all 2n neighbors are present
    shape: tuple             # full lattice extent per axis
    flat_index: np.ndarray   # lattice -> node index, -1 outside the mask

    def __post_init__(self):
        for name in ("nodes", "neighbors", "interior", "flat_index"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def boundary(self) -> np.ndarray:
        return ~self.interior

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim


def build_grid(dim: int, R: float, h: float) -> Grid:
    if dim not in (1, 2, 3):
        raise GridError("dim must be 1, 2, or 3")
    if h <= 0 or R <= 0:
        raise GridError("R and h must be positive")
    if R / h < 8.0:
        raise GridError(f"R/h = {R/h:.2f} is below the minimum resolution of 8")
    K = int(math.floor(R / h + 1e-12))
    axis = np.arange(-K, K + 1) * h
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    inside = np.linalg.norm(pts, axis=1) <= R + 1e-12
    flat_index = np.full(pts.shape[0], -1, dtype=np.int64)
    flat_index[inside] = np.arange(int(inside.sum()))
    nodes = pts[inside]

    shape = (2 * K + 1,) * dim
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(dim)], dtype=np.int64)
    lattice_ids = np.flatnonzero(inside)
    m = nodes.shape[0]
    neighbors = np.empty((2 * dim, m), dtype=np.int64)
    coords = np.stack(np.unravel_index(lattice_ids, shape), axis=-1)
    own = np.arange(m, dtype=np.int64)
    for ax in range(dim):
        for side, off in ((0, -1), (1, +1)):
            nb = coords[:, ax] + off
            ok = (nb >= 0) & (nb < shape[ax])
            flat = lattice_ids + off * strides[ax]
            idx = np.where(ok, flat_index[np.where(ok, flat, 0)], -1)
            neighbors[2 * ax + side] = np.where(idx >= 0, idx, own)
    interior = (neighbors != own[None, :]).all(axis=0)
    return Grid(dim=dim, R=float(R), h=float(h), nodes=nodes, neighbors=neighbors,
                interior=interior, shape=shape, flat_index=flat_index)


@dataclass
class Field:
    """Node values over a grid; value-semantic (copy to mutate)."""

    grid: Grid
    values: np.ndarray  # (m, k)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_nodes:
            raise GridError(f"field has {v.shape[0]} rows for {self.grid.n_nodes} nodes")
        if not np.isfinite(v).all():
            raise GridError("field contains non-finite entries")
        self.values = v

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def laplacian(f: Field) -> Field:
    out = kernels.laplacian(f.values, f.grid.neighbors, 1.0 / f.grid.h ** 2)
    return Field(f.grid, out)


def _corner_weights(grid: Grid, points: np.ndarray):
    """Multilinear cell corners and weights, dropping masked corners.

    Returns (indices (p, 2^n), weights (p, 2^n), covered (p,)) where weights
    renormalize over the corners present in the mask; covered is False when
    every corner is masked out (no information at that point).
    """
    dim = grid.dim
    K = (grid.shape[0] - 1) // 2
    t = points / grid.h + K
    base = np.floor(t).astype(np.int64)
    base = np.clip(base, 0, grid.shape[0] - 2)
    frac = t - base
    m = points.shape[0]
    n_corner = 1 << dim
    idx = np.empty((m, n_corner), dtype=np.int64)
    wts = np.empty((m, n_corner))
    strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(dim)], dtype=np.int64)
    for corner in range(n_corner):
        w = np.ones(m)
        flat = np.zeros(m, dtype=np.int64)
        for ax in range(dim):
            bit = (corner >> ax) & 1
            cc = base[:, ax] + bit
            w = w * np.where(bit, frac[:, ax], 1.0 - frac[:, ax])
            flat = flat + cc * strides[ax]
        node = grid.flat_index[flat]
        wts[:, corner] = np.where(node >= 0, w, 0.0)
        idx[:, corner] = np.where(node >= 0, node, 0)
    total = wts.sum(axis=1)
    covered = total > 1e-12
    wts = np.where(covered[:, None], wts / np.maximum(total, 1e-300)[:, None], 0.0)
    return idx, wts, covered


def interpolate(f: Field, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multilinear interpolation at arbitrary points.

    Returns (values (p, k), valid (p,)); valid is False where the point
    left the ball or its whole cell is masked out, in which case the value
    row is the best effort from whatever corners were available (zeros when
    none were).
    """
    points = np.atleast_2d(np.asarray(points, float))
    inside = np.linalg.norm(points, axis=1) <= f.grid.R + 1e-12
    clipped = points.copy()
    norms = np.linalg.norm(points, axis=1)
    far = norms > f.grid.R
    if far.any():
        clipped[far] = points[far] * (f.grid.R / norms[far])[:, None]
    idx, wts, covered = _corner_weights(f.grid, clipped)
    vals = np.einsum("pc,pck->pk", wts, f.values[idx])
    return vals, inside & covered


def sample_ray(f: Field, direction, lambdas) -> tuple[np.ndarray, np.ndarray]:
    """Field values at lambda * direction for each lambda.

    Points beyond the ball are clipped to the sphere and flagged (second
    return value False at those entries).
    """
    d = np.asarray(direction, float)
    n = np.linalg.norm(d)
    if n == 0:
        raise GridError("direction must be nonzero")
    d = d / n
    lambdas = np.atleast_1d(np.asarray(lambdas, float))
    pts = lambdas[:, None] * d[None, :]
    return interpolate(f, pts)


def node_wall_distances(grid: Grid, D: coxeter.Cone) -> np.ndarray:
    """Distance to the boundary of D intersected with the ball, per node.

    Zero for nodes outside the closed cone; for inside nodes the minimum of
    the wall distance and the distance R - |x| to the sphere.
    """
    d, inside = coxeter.wall_distances(D, grid.nodes)
    sphere = grid.R - np.linalg.norm(grid.nodes, axis=1)
    return np.where(inside, np.minimum(d, sphere), 0.0)


# ---------------------------------------------------------------------------
# serialization: CSV table of nodes+values plus a JSON header


def save_field(f: Field, basepath) -> tuple[Path, Path]:
    base = Path(basepath)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    table = np.hstack([f.grid.nodes, f.values])
    cols = [f"x{i+1}" for i in range(f.grid.dim)] + [f"u{i+1}" for i in range(f.n_components)]
    np.savetxt(csv_path, table, fmt="%.17g", delimiter=",", header=",".join(cols))
    header = {
        "n": f.grid.dim,
        "R": f.grid.R,
        "h": f.grid.h,
        "nodes": f.grid.n_nodes,
        "components": f.n_components,
    }
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return csv_path, json_path


def load_field(basepath) -> Field:
    base = Path(basepath)
    header = json.loads(base.with_suffix(".json").read_text())
    g = build_grid(header["n"], header["R"], header["h"])
    table = np.loadtxt(base.with_suffix(".csv"), delimiter=",", ndmin=2)
    if table.shape[0] != header["nodes"] or g.n_nodes != header["nodes"]:
        raise GridError("node count in file does not match the rebuilt grid")
    xs = table[:, : header["n"]]
    if np.abs(xs - g.nodes).max() > 1e-9:
        raise GridError("node positions in file do not match the rebuilt grid")
    return Field(g, table[:, header["n"]:])
