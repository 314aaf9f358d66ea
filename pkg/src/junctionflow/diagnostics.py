"""Quality checks for computed fields.

Everything here is read-only over a Field: the energy by midpoint
quadrature, the cone-positivity margin, discrete subharmonicity of the
composed gauge, an exponential-decay fit of the gauge against distance to
the region boundary, far-field connection errors toward each orbit
minimum, and the width of the collar where the gauge still exceeds its
cap.  build_report bundles them for a converged run and the writers
serialize the bundle as one JSON document plus a scatter CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .coxeter import Cone, OrbitData, orbit_and_stabilizer, positivity_by_roots, wall_distances
from .grid import Field, Grid, node_wall_distances, sample_ray
from .potential import Potential, QFunction


class DiagnosticsError(RuntimeError):
    """Raised when a check cannot be evaluated (for example, too few nodes)."""


Q_FLOOR_FIT = 1e-8        # gauge values below this are indistinguishable from zero
Q_FLOOR_SUB = 1e-6        # gauge may be nonsmooth at its base point
SHELL_EXCLUDED = 0.10     # fraction of the outer radius dropped from decay fits
TOL_SUBHARMONIC = 1e-4


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit q ~ K exp(-k d).

    band is the (min, max) range of distances that entered the fit and
    n_nodes how many nodes it used.
    """

    k: float
    K: float
    r2: float
    band: tuple[float, float]
    n_nodes: int


@dataclass(frozen=True)
class SubharmonicityCheck:
    """Minimum discrete Laplacian of the composed gauge, or why it was skipped."""

    minimum: float | None
    passed: bool
    skipped: bool
    note: str


@dataclass(frozen=True)
class DiagnosticsReport:
    """One converged run's quality summary; every field is populated."""

    positivity_margin: float
    subharmonicity: SubharmonicityCheck
    decay: DecayFit
    action: float
    connection_errors: np.ndarray
    collar_width: float


def _gradient_squared(f: Field) -> np.ndarray:
    """Pointwise |grad u|^2 by centered differences, one-sided at the mask edge."""
    grid, vals = f.grid, f.values
    own = np.arange(grid.n_nodes)
    total = np.zeros(grid.n_nodes)
    for ax in range(grid.dim):
        minus = grid.neighbors[2 * ax]
        plus = grid.neighbors[2 * ax + 1]
        has_minus = minus != own
        has_plus = plus != own
        span = np.where(has_minus & has_plus, 2.0 * grid.h, grid.h)
        d = vals[plus] - vals[minus]
        da = np.einsum("ij,ij->i", d, d) / span ** 2
        da[~(has_minus | has_plus)] = 0.0
        total += da
    return total


def action(f: Field, W: Potential) -> float:
    """Energy of the field: sum over nodes of (|grad u|^2 / 2 + W(u)) h^n."""
    dens = 0.5 * _gradient_squared(f) + W.w(f.values)
    return float(f.grid.cell_volume * dens.sum())


def check_subharmonicity(
    f: Field, Q: QFunction, D: Cone, grid: Grid, *, tol: float = TOL_SUBHARMONIC
) -> SubharmonicityCheck:
    """Minimum of the discrete Laplacian of x -> Q(f(x)) where it is meaningful.

    The composed gauge is only expected to be subharmonic when the field
    takes values in the closed target cone, so the cone-positivity margin
    is checked first; a failure skips the check rather than reporting a
    meaningless minimum.  Evaluation is restricted to interior nodes of
    the region (and of the ball) where the gauge clears a small floor,
    since Q may be nonsmooth at its base point.
    """
    if D.walls:
        report = positivity_by_roots(grid.nodes, f.values, D.walls)
        if not report.passed:
            return SubharmonicityCheck(
                minimum=None,
                passed=False,
                skipped=True,
                note=(
                    f"positivity margin {report.worst:.3e} fails its tolerance; "
                    "the composed gauge is only subharmonic over the cone"
                ),
            )
    q = np.asarray(Q.q(f.values), float)
    d = node_wall_distances(grid, D)
    usable = grid.interior & (d > 0.0) & (q > Q_FLOOR_SUB)
    if not usable.any():
        return SubharmonicityCheck(
            minimum=0.0,
            passed=True,
            skipped=False,
            note="no interior region node clears the gauge floor; nothing to bound",
        )
    lap = kernels.laplacian(q[:, None], grid.neighbors, 1.0 / grid.h ** 2)
    minimum = float(lap[usable, 0].min())
    return SubharmonicityCheck(
        minimum=minimum,
        passed=minimum >= -tol,
        skipped=False,
        note="",
    )


def _region_depth(grid: Grid, D: Cone) -> np.ndarray:
    """Distance to the region walls per node, zero outside the closed region.

    Deliberately ignores the sphere: the gauge keeps decaying with wall
    distance all the way out, while distance to the sphere shrinks there,
    so folding the sphere in would bend every decay profile backwards.
    Sphere-adjacent nodes are handled by the outer-shell exclusion
    instead.  A wall-free region falls back to depth inside the ball.
    """
    if not D.walls:
        return grid.R - np.linalg.norm(grid.nodes, axis=1)
    d, inside = wall_distances(D, grid.nodes)
    return np.where(inside, d, 0.0)


def _decay_samples(
    f: Field, Q: QFunction, D: Cone, grid: Grid, eta: float, qbar: float | None
):
    q = np.asarray(Q.q(f.values), float)
    d = _region_depth(grid, D)
    radius = np.linalg.norm(grid.nodes, axis=1)
    usable = (d >= eta) & (q >= Q_FLOOR_FIT)
    usable &= radius <= (1.0 - SHELL_EXCLUDED) * grid.R
    if qbar is not None:
        usable &= q <= qbar
    return d[usable], q[usable]


def fit_decay(
    f: Field, Q: QFunction, D: Cone, grid: Grid, eta: float,
    *, qbar: float | None = None,
) -> DecayFit:
    """Fit log q against distance to the region boundary beyond the collar.

    Uses nodes with d >= eta, gauge above the detectability floor (and
    below qbar when given), excluding the outer shell of the ball where
    the two natural distance notions disagree.  Returns the decay rate k,
    amplitude K and goodness of fit.
    """
    d, q = _decay_samples(f, Q, D, grid, eta, qbar)
    if d.size < 30:
        raise DiagnosticsError(
            f"insufficient data for a decay fit: {d.size} usable nodes < 30"
        )
    logq = np.log(q)
    slope, intercept = np.polyfit(d, logq, 1)
    fitted = slope * d + intercept
    ss_res = float(((logq - fitted) ** 2).sum())
    ss_tot = float(((logq - logq.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    k = -float(slope)
    if not math.isfinite(k):
        raise DiagnosticsError("decay fit produced a non-finite rate")
    return DecayFit(
        k=k,
        K=float(np.exp(intercept)),
        r2=r2,
        band=(float(d.min()), float(d.max())),
        n_nodes=int(d.size),
    )


def save_decay_scatter(
    path, f: Field, Q: QFunction, D: Cone, grid: Grid, eta: float,
    *, qbar: float | None = None,
) -> Path:
    """Write the decay-fit input as CSV rows (d, q, log q)."""
    d, q = _decay_samples(f, Q, D, grid, eta, qbar)
    out = Path(path)
    table = np.column_stack([d, q, np.log(q)])
    np.savetxt(out, table, fmt="%.17g", delimiter=",", header="d,q,logq")
    return out


def check_connection(f: Field, orbit: OrbitData, lambda_frac: float) -> np.ndarray:
    """Distance from the field to each orbit minimum along its ray.

    Samples the field at lambda_frac * R / |a1| along the unit direction of
    each orbit member and reports |u - g a1| per member, in orbit order.
    """
    if not (0.0 < lambda_frac < 1.0):
        raise DiagnosticsError("lambda_frac must lie in (0, 1)")
    lam = lambda_frac * f.grid.R / float(np.linalg.norm(orbit.a1))
    errs = np.empty(orbit.orbit.shape[0])
    for i, target in enumerate(orbit.orbit):
        vals, _ = sample_ray(f, target, np.array([lam]))
        errs[i] = float(np.linalg.norm(vals[0] - target))
    return errs


def propagation_collar(
    f: Field, Q: QFunction, D: Cone, grid: Grid, qbar: float
) -> float:
    """Smallest width w with q(u) <= qbar wherever the wall distance is >= w."""
    q = np.asarray(Q.q(f.values), float)
    d = _region_depth(grid, D)
    hot = q > qbar
    if not hot.any():
        return 0.0
    return float(d[hot].max())


def build_report(result, W: Potential, G, *, lambda_frac: float = 0.7) -> DiagnosticsReport:
    """DiagnosticsReport for a converged SolveResult (accepted field).

    Derives the decay-band offset from the measured collar (plus two grid
    spacings, so the fit starts clear of the constraint region).
    """
    if not result.converged:
        raise DiagnosticsError("diagnostics want a converged result")
    Q, D, config = result.qfun, result.region, result.config
    if Q is None or D is None or config is None:
        raise DiagnosticsError("result carries no gauge, region, or config")
    f = result.field
    grid = f.grid
    orbit = orbit_and_stabilizer(G, Q.base)
    margin = (
        positivity_by_roots(grid.nodes, f.values, D.walls).worst if D.walls else 0.0
    )
    collar = propagation_collar(f, Q, D, grid, config.qbar)
    eta = collar + 2.0 * grid.h
    decay = fit_decay(f, Q, D, grid, eta, qbar=config.qbar)
    return DiagnosticsReport(
        positivity_margin=float(margin),
        subharmonicity=check_subharmonicity(f, Q, D, grid),
        decay=decay,
        action=action(f, W),
        connection_errors=check_connection(f, orbit, lambda_frac),
        collar_width=collar,
    )


def report_to_dict(report: DiagnosticsReport) -> dict:
    """Plain-python form of the report, ready for json.dumps."""
    sub = report.subharmonicity
    return {
        "positivity_margin": report.positivity_margin,
        "subharmonicity": {
            "min": sub.minimum,
            "passed": sub.passed,
            "skipped": sub.skipped,
            "note": sub.note,
        },
        "decay": {
            "k": report.decay.k,
            "K": report.decay.K,
            "r2": report.decay.r2,
            "band": list(report.decay.band),
            "n_nodes": report.decay.n_nodes,
        },
        "action": report.action,
        "connection_errors": [float(e) for e in report.connection_errors],
        "collar_width": report.collar_width,
    }


def save_report(report: DiagnosticsReport, path) -> Path:
    out = Path(path)
    out.write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
    return out
