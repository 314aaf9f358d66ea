"""Projected gradient flow producing junction solutions.

The construction runs in three moves.  An affine-in-distance initial field
ramps from zero on the cone boundary up to the base minimum a1 and is
extended equivariantly to the whole ball.  Explicit Euler descent steps are
interleaved with a pointwise retraction onto {Q <= qbar} inside the
constraint ball C_R and with periodic equivariant averaging.  Once the
constrained run settles with interior slack, the constraint is dropped and
a short free flow turns the minimizer into a discrete solution of
Delta u = W_u(u) with zero-flux boundary conditions.

Equivariant averaging is not a cosmetic projection but the constraint
that holds the junction in place: the unaveraged flow has a slow neutral
mode that translates the junction off-center and eventually collapses the
field onto a single constant minimum.  Averaging therefore stays on for
the whole run, release phase included.  When every group element maps
lattice nodes to lattice nodes the averaging is an exact permutation and
the flow drives the pointwise residual itself below tolerance.  Otherwise
interpolation leaves an O(h^2) noise floor in that residual, so the
projected dynamics are instead run to a fixed point of the full update
cycle, and after release a damped Newton iteration on the discrete
stationarity system pushes the raw residual down to tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import splu

from . import kernels
from .coxeter import Cone, ReflectionGroup, positivity_by_roots, wall_distance
from .grid import Field, Grid, build_grid, interpolate, save_field
from .potential import Potential, QFunction


class FlowError(RuntimeError):
    """Invalid configuration, divergent stepping, or a lost constraint margin."""


LEVEL_TOL = 1e-6          # |Q - qbar| window counted as "on the constraint level"
MONITOR_MIN = 25          # measurements happen every this many steps at least


def _monitor_cadence(period: int) -> int:
    """Smallest multiple of the averaging period that is >= MONITOR_MIN."""
    return period * max(1, math.ceil(MONITOR_MIN / period))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FlowConfig:
    """Run parameters; geometry checks live in validate().

    x0 is the unit direction of the constraint-ball center x_R = (R/2) x0.
    t_release is the free-flow time after the constraint is dropped and
    before the Euler-Lagrange residual is required to reach tol_residual.
    """

    R: float
    h: float
    dt: float
    qbar: float
    L: float
    x0: np.ndarray
    tol_residual: float = 1e-6
    max_steps: int = 500_000
    projection_period: int = 10
    t_release: float | None = None
    stepper: str = "explicit"  # "semi-implicit" treats the Laplacian implicitly (1D only)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        n = np.linalg.norm(x0)
        if n == 0 or not np.isfinite(n):
            raise FlowError("x0 must be a nonzero finite direction")
        x0 = x0 / n
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if self.t_release is None:
            object.__setattr__(self, "t_release", 50.0 * self.dt)

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def x_R(self) -> np.ndarray:
        return 0.5 * self.R * self.x0

    def validate(self, W: Potential, D: Cone) -> None:
        if not (0.0 < self.qbar < W.r0):
            raise FlowError(
                f"qbar must lie strictly between 0 and r0 = {W.r0:.6g}, got {self.qbar:.6g}"
            )
        if self.stepper not in ("explicit", "semi-implicit"):
            raise FlowError(f"unknown stepper {self.stepper!r}")
        if self.stepper == "semi-implicit" and self.dim != 1:
            raise FlowError("the semi-implicit stepper is only wired up for 1D runs")
        if self.dt <= 0:
            raise FlowError("dt must be positive")
        if (
            self.stepper == "explicit"
            and self.dt > 0.25 * self.h ** 2 / self.dim + 1e-15
        ):
            raise FlowError(
                f"dt = {self.dt:.3g} violates the stability bound 0.25 h^2/n = "
                f"{0.25 * self.h ** 2 / self.dim:.3g}"
            )
        if self.L <= 0:
            raise FlowError("constraint-ball radius L must be positive")
        if self.dim != W.dim:
            raise FlowError(f"x0 has dimension {self.dim}, potential has {W.dim}")
        xr = self.x_R
        dist, inside = wall_distance(D, xr)
        room = min(dist, self.R - float(np.linalg.norm(xr)))
        if not inside or room < 2.0 * self.L - 1e-9:
            raise FlowError(
                f"ball B(x_R; 2L) does not fit inside D within the radius-{self.R:.6g} "
                f"ball: clearance {room:.6g} < 2L = {2 * self.L:.6g}; shrink L or move x0"
            )
        if self.projection_period < 1 or self.max_steps < 1:
            raise FlowError("projection_period and max_steps must be positive")


def default_config(W: Potential, D: Cone, R: float, h: float, **overrides) -> FlowConfig:
    """FlowConfig with the stock parameter choices.

    dt = 0.2 h^2/n, qbar = 0.8 r0, x0 along a1, averaging every step in 1D
    and every 10 steps otherwise, and L = R/4 shrunk when B(x_R; 2L) would
    poke out of D or of the ball.
    """
    dim = W.dim
    x0 = np.asarray(overrides.pop("x0", W.a1), dtype=float)
    n = np.linalg.norm(x0)
    if n == 0:
        raise FlowError("cannot take x0 along a1: a1 is the origin; pass x0 explicitly")
    x0 = x0 / n
    x_R = 0.5 * R * x0
    dist, inside = wall_distance(D, x_R)
    if not inside:
        raise FlowError("x_R = (R/2) x0 lies outside D; pass an interior x0")
    room = min(dist, R - 0.5 * R)
    L = overrides.pop("L", min(R / 4.0, 0.495 * room))
    kwargs = {
        "R": R,
        "h": h,
        "dt": 0.2 * h ** 2 / dim,
        "qbar": 0.8 * W.r0,
        "L": L,
        "x0": x0,
        "projection_period": 1 if dim == 1 else 10,
    }
    kwargs.update(overrides)
    return FlowConfig(**kwargs)


# ---------------------------------------------------------------------------
# results


@dataclass
class SolveResult:
    """Output of a constrained or released run.

    field is the accepted (group-averaged) state; field_raw the same state
    before the closing average.  Histories are sampled at monitor_steps, a
    fixed multiple of the averaging period, plus the final step.  converged
    means the run went stationary: pointwise residual below tol_residual,
    or a fixed point of the whole update cycle when averaging needs
    interpolation (see solve_constrained); after a released run whose
    polish succeeded, the last residual_history entry is the raw Newton
    residual.
    """

    field: Field
    residual_history: np.ndarray
    action_history: np.ndarray
    constraint_active_final: bool
    steps_taken: int
    converged: bool
    monitor_steps: np.ndarray
    pos_margin_history: np.ndarray
    field_raw: Field
    qfun: QFunction | None = dc_field(default=None, repr=False)
    region: Cone | None = dc_field(default=None, repr=False)
    config: FlowConfig | None = dc_field(default=None, repr=False)


# ---------------------------------------------------------------------------
# building blocks


def init_u_aff(grid: Grid, D: Cone, a1) -> Field:
    """Initial field: min(d(x, boundary of D), 1) * a1, extended equivariantly.

    Every node is mapped into the closed cone by the group element whose
    copy contains it (ties land on shared walls where the field vanishes,
    so the choice does not matter), scaled there, and mapped back.
    """
    a1 = np.asarray(a1, dtype=float)
    if D.group is None:
        raise FlowError("region carries no group; build it with region_D")
    if not D.walls:
        return Field(grid, np.tile(a1, (grid.n_nodes, 1)))
    wallm = D.wall_matrix()
    elems = D.group.elements
    back = np.einsum("gji,mj->gmi", elems, grid.nodes)  # g^T x for every g
    depth = (back @ wallm.T).min(axis=2)
    pick = depth.argmax(axis=0)
    rows = np.arange(grid.n_nodes)
    d = np.maximum(depth[pick, rows], 0.0)
    images = np.einsum("gij,j->gi", elems, a1)
    return Field(grid, np.minimum(d, 1.0)[:, None] * images[pick])


def _check_divergence(vals: np.ndarray, W: Potential, step_no: int) -> None:
    worst = float(np.abs(vals).max())
    if not np.isfinite(worst) or worst > 10.0 * W.bound_radius:
        raise FlowError(
            f"flow diverged at step {step_no}: max |u| = {worst:.4g} exceeds "
            f"10 b = {10.0 * W.bound_radius:.4g}; reduce dt"
        )


def step(f: Field, W: Potential, dt: float) -> Field:
    """One explicit Euler update f + dt (laplacian(f) - W_u(f))."""
    grad = W.grad(f.values)
    out = kernels.euler_step(f.values, f.grid.neighbors, 1.0 / f.grid.h ** 2, dt, grad)
    _check_divergence(out, W, 0)
    return Field(f.grid, out)


class _Averager:
    """Group averaging operator bound to one grid.

    Elements that map the node lattice to itself (sign flips, axis swaps)
    are applied as index permutations, which is exact and fast; the rest
    go through multilinear interpolation.  Sample points g x stay on the
    sphere of x, but a whole interpolation cell can still fall outside the
    node mask in thin slivers next to the boundary sphere; such samples
    keep the node's own value.
    """

    def __init__(self, grid: Grid, G: ReflectionGroup):
        self.grid = grid
        self.G = G
        offsets = (np.array(grid.shape) - 1) // 2
        self.plans = []  # (g, perm) with perm None for the interpolation path
        for g in G.elements:
            pts = grid.nodes @ g.T
            lattice = pts / grid.h
            k = np.rint(lattice)
            if np.abs(lattice - k).max() <= 1e-9:
                flat = np.ravel_multi_index(
                    tuple((k[:, a] + offsets[a]).astype(np.int64) for a in range(grid.dim)),
                    grid.shape,
                )
                perm = grid.flat_index[flat]
                if (perm >= 0).all():
                    self.plans.append((g, perm))
                    continue
            self.plans.append((g, None))

    @property
    def exact(self) -> bool:
        return all(perm is not None for _, perm in self.plans)

    def apply(self, vals: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(vals)
        f = Field(self.grid, vals)
        for g, perm in self.plans:
            if perm is not None:
                acc += vals[perm] @ g  # rows @ g applies g^T = g^{-1} to values
            else:
                sampled, ok = interpolate(f, self.grid.nodes @ g.T)
                if not ok.all():
                    sampled[~ok] = vals[~ok]
                acc += sampled @ g
        acc /= self.G.order
        return acc


def project_equivariant(f: Field, G: ReflectionGroup) -> Field:
    """Group averaging |G|^-1 sum_g g^-1 f(g x) on the field's grid."""
    return Field(f.grid, _Averager(f.grid, G).apply(f.values))


def _retract_inplace(vals: np.ndarray, cr_idx: np.ndarray, Q: QFunction, qbar: float):
    """Pull C_R nodes with Q > qbar back to the level set; returns (disp, flagged)."""
    sub = vals[cr_idx]
    q = Q.q(sub)
    hot = q > qbar
    if not hot.any():
        return 0.0, np.empty(0, dtype=np.int64)
    idx = cr_idx[hot]
    old = vals[idx].copy()
    if Q.radial:
        dv = old - Q.base
        r = np.linalg.norm(dv, axis=1)
        vals[idx] = Q.base + (qbar / r)[:, None] * dv
        flagged = np.empty(0, dtype=np.int64)
    else:
        flagged = []
        for node, v in zip(idx, old):
            try:
                vals[node] = _polar_descend(Q, v, qbar)
            except FlowError:
                flagged.append(node)
        flagged = np.asarray(flagged, dtype=np.int64)
    disp = float(np.abs(vals[idx] - old).max())
    return disp, flagged


def _polar_descend(Q: QFunction, v: np.ndarray, q_to: float) -> np.ndarray:
    """Walk down the polar ray through v to the level Q = q_to.

    Integrates du/dq = Q_u/|Q_u|^2 with adaptive RK4, accepting a step when
    the realized level increment matches the prescribed one.
    """
    u = np.asarray(v, dtype=float).copy()
    q = float(Q.q(u[None])[0])
    if q <= q_to:
        return u
    floor = 1e-14 * (1.0 + float(np.abs(v).max()))

    def rhs(x):
        g = Q.qgrad(x[None])[0]
        n2 = float(g @ g)
        if n2 < 1e-24:
            raise FlowError("polar retraction hit a vanishing level-set gradient")
        return g / n2

    hq = -(q - q_to) * 0.25
    while q > q_to + 1e-12:
        hq = max(hq, q_to - q)  # both negative; do not overshoot
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * hq * k1)
        k3 = rhs(u + 0.5 * hq * k2)
        k4 = rhs(u + hq * k3)
        u_new = u + (hq / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        q_new = float(Q.q(u_new[None])[0])
        err = abs(q_new - (q + hq))
        if err <= max(1e-10 * abs(hq), floor):
            u, q = u_new, q_new
            hq *= 1.5
        else:
            hq *= 0.5
            if abs(hq) < 1e-12 * max(1.0, q):
                raise FlowError("polar retraction step collapsed before reaching the level")
    return u


def retract_constraint(f: Field, Q: QFunction, qbar: float, cr) -> Field:
    """Field with C_R nodes above the constraint level pulled back onto it.

    cr is the C_R node set, as a boolean mask or an index array.  Nodes at
    exactly qbar are left alone.  If the polar walk fails anywhere, the
    raised FlowError carries the offending node indices as .flagged_nodes.
    """
    cr = np.asarray(cr)
    cr_idx = np.flatnonzero(cr) if cr.dtype == bool else cr.astype(np.int64)
    out = f.values.copy()
    _, flagged = _retract_inplace(out, cr_idx, Q, qbar)
    if flagged.size:
        err = FlowError(f"polar retraction failed at {flagged.size} node(s)")
        err.flagged_nodes = flagged
        raise err
    return Field(f.grid, out)


def action_edges(f: Field, W: Potential) -> float:
    """Discrete action sum_x W(u) h^n + half the squared differences over edges.

    This is the Lyapunov function of the explicit scheme: each Euler step
    decreases it (up to roundoff) as long as dt respects the stability
    bound, which is what the descent monitors check.
    """
    grid, vals = f.grid, f.values
    total_w = float(np.sum(W.w(vals)))
    diff2 = 0.0
    for a in range(grid.neighbors.shape[0]):
        d = vals[grid.neighbors[a]] - vals
        diff2 += float(np.einsum("ij,ij->", d, d))
    # every realized edge appears in the table twice; ghost self-edges add zero
    return grid.cell_volume * (total_w + 0.25 * diff2 / grid.h ** 2)


def _graph_laplacian(grid: Grid) -> sparse.csr_matrix:
    """Sparse matrix of the neighbor-table Laplacian (one scalar component).

    Off-diagonal +1/h^2 per table entry and -2n/h^2 on the diagonal; ghost
    self-edges land on the diagonal and cancel their own slot, which is
    exactly what the stencil kernel computes.
    """
    m = grid.n_nodes
    hinv2 = 1.0 / grid.h ** 2
    rows = np.tile(np.arange(m, dtype=np.int64), grid.neighbors.shape[0])
    cols = grid.neighbors.reshape(-1)
    off = sparse.coo_matrix(
        (np.full(rows.size, hinv2), (rows, cols)), shape=(m, m)
    )
    diag = sparse.diags(np.full(m, -grid.neighbors.shape[0] * hinv2))
    return (off + diag).tocsr()


def newton_refine(
    f: Field, W: Potential, *, tol: float = 1e-10, max_iter: int = 30,
    shift: float = 1e-8,
) -> Field:
    """Solve laplacian(u) = W_u(u) on the field's grid by damped Newton steps.

    Meant as the endgame after a flow has settled near a discrete solution:
    each iteration factors the sparse Jacobian (Laplacian minus the potential
    Hessian) and backtracks the update until the max-norm residual drops.
    shift subtracts a tiny multiple of the identity from the Jacobian; on a
    finite ball the profile's translation modes have exponentially small
    eigenvalues, and without the shift residual roundoff would send the
    iterate sliding along them.  The solution set is unchanged (an update of
    zero still means the residual is zero).  Raises FlowError when the
    residual cannot be pushed below tol.
    """
    grid = f.grid
    m, k = f.values.shape
    lap_mat = sparse.kron(
        _graph_laplacian(grid), sparse.identity(k, format="csr"), format="csr"
    )
    hinv2 = 1.0 / grid.h ** 2
    lap = np.empty_like(f.values)

    def residual_field(vals):
        kernels.laplacian(vals, grid.neighbors, hinv2, out=lap)
        return lap - W.grad(vals)

    u = f.values.copy()
    r = residual_field(u)
    rnorm = float(np.abs(r).max())
    block_ptr = np.arange(m + 1)
    for _ in range(max_iter):
        if rnorm <= tol:
            return Field(grid, u)
        hess = sparse.bsr_matrix(
            (W.hess(u), block_ptr[:-1], block_ptr), shape=(m * k, m * k)
        )
        jac = (lap_mat - hess - shift * sparse.identity(m * k)).tocsc()
        delta = splu(jac).solve(-r.reshape(-1)).reshape(m, k)
        lam = 1.0
        while True:
            u_try = u + lam * delta
            r_try = residual_field(u_try)
            rnorm_try = float(np.abs(r_try).max())
            if rnorm_try < rnorm:
                u, r, rnorm = u_try, r_try, rnorm_try
                break
            lam *= 0.5
            if lam < 1e-4:
                raise FlowError(
                    f"stationarity refinement stalled at residual {rnorm:.3e}"
                )
    if rnorm <= tol:
        return Field(grid, u)
    raise FlowError(
        f"stationarity refinement did not reach {tol:g} in {max_iter} iterations; "
        f"residual {rnorm:.3e}"
    )


# ---------------------------------------------------------------------------
# the driver


class _RunLog:
    def __init__(self, log_file, checkpoint_dir, checkpoint_every):
        self.handle = None
        self.owns = False
        if log_file is not None:
            if hasattr(log_file, "write"):
                self.handle = log_file
            else:
                self.handle = open(log_file, "a", encoding="utf-8")
                self.owns = True
        self.ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.ckpt_every = int(checkpoint_every)
        self._last_ckpt = -1
        if self.ckpt_dir:
            self.ckpt_dir.mkdir(parents=True, exist_ok=True)

    def line(self, step_no, residual, action, pos_margin):
        if self.handle is None:
            return
        self.handle.write(
            f"step={step_no} residual={residual:.6e} action={action:.12e} "
            f"pos_margin={pos_margin:.6e}\n"
        )
        self.handle.flush()

    def note(self, text):
        if self.handle is None:
            return
        self.handle.write(f"# {text}\n")
        self.handle.flush()

    def due(self, step_no) -> bool:
        if self.ckpt_dir is None or self.ckpt_every <= 0:
            return False
        return step_no - self._last_ckpt >= self.ckpt_every

    def checkpoint(self, f: Field, step_no):
        save_field(f, self.ckpt_dir / f"checkpoint_{step_no:08d}")
        self._last_ckpt = step_no

    def close(self):
        if self.owns and self.handle is not None:
            self.handle.close()


def _positivity_margin(nodes, vals, D: Cone) -> float:
    if not D.walls:
        return 0.0
    return positivity_by_roots(nodes, vals, D.walls).worst


class _Stepper:
    """One flow update u -> u + dt (laplacian(u) - W_u(u)).

    The explicit form goes through the fused kernel; the semi-implicit one
    treats the Laplacian backward in time via a banded Cholesky solve (1D
    lattices are consecutive in node order, so the matrix is tridiagonal),
    which lifts the h^2 step-size ceiling while keeping the same fixed
    points.  Both also report the Euler-Lagrange residual of a state.
    """

    def __init__(self, grid: Grid, W: Potential, dt: float, kind: str):
        self.grid, self.W, self.dt, self.kind = grid, W, dt, kind
        self.hinv2 = 1.0 / grid.h ** 2
        self._lap = np.empty((grid.n_nodes, W.dim))
        if kind == "semi-implicit":
            own = np.arange(grid.n_nodes)
            deg = (grid.neighbors != own[None, :]).sum(axis=0)
            ab = np.zeros((2, grid.n_nodes))
            ab[1] = 1.0 + dt * self.hinv2 * deg
            ab[0, 1:] = -dt * self.hinv2
            self._chol = cholesky_banded(ab)

    def advance(self, u: np.ndarray, out: np.ndarray) -> np.ndarray:
        grad = self.W.grad(u)
        if self.kind == "explicit":
            kernels.euler_step(u, self.grid.neighbors, self.hinv2, self.dt, grad, out=out)
        else:
            out[:] = cho_solve_banded((self._chol, False), u - self.dt * grad)
        return out

    def residual(self, u: np.ndarray, mask_idx: np.ndarray) -> float:
        if mask_idx.size == 0:
            return 0.0
        kernels.laplacian(u, self.grid.neighbors, self.hinv2, out=self._lap)
        r = self._lap[mask_idx] - self.W.grad(u[mask_idx])
        return float(np.abs(r).max())


def solve_constrained(
    config: FlowConfig,
    W: Potential,
    Q: QFunction,
    G: ReflectionGroup,
    D: Cone,
    *,
    checkpoint_every: int = 0,
    checkpoint_dir=None,
    log_file=None,
) -> SolveResult:
    """Constrained minimization from u_aff until the dynamics go stationary.

    Averaging runs every projection_period steps for the whole run; it is
    what pins the junction, so it is never dropped.  Convergence has two
    routes: either the Euler-Lagrange residual (max norm over interior
    nodes outside C_R) and the retraction displacement both drop below
    tol_residual, or, when some group elements need interpolation and the
    pointwise residual therefore floors at O(h^2)/h^2 noise, the full
    update cycle (steps, retraction, averaging) reaches a fixed point:
    the state moves less than tol_residual per unit time between two
    consecutive monitors compared at the same cycle phase.
    """
    config.validate(W, D)
    grid = build_grid(config.dim, config.R, config.h)
    u = init_u_aff(grid, D, Q.base).values.copy()

    cr_idx = np.flatnonzero(
        np.linalg.norm(grid.nodes - config.x_R, axis=1) <= config.L + 1e-12
    )
    res_idx = np.flatnonzero(
        grid.interior
        & (np.linalg.norm(grid.nodes - config.x_R, axis=1) > config.L + 1e-12)
    )

    log = _RunLog(log_file, checkpoint_dir, checkpoint_every)
    stepper = _Stepper(grid, W, config.dt, config.stepper)
    avg = _Averager(grid, G)
    out = np.empty_like(u)
    hist_steps, hist_res, hist_act, hist_pos = [], [], [], []
    period = config.projection_period
    cadence = _monitor_cadence(period)
    u_prev, s_prev = u.copy(), 0
    converged = False
    steps_taken = 0

    try:
        for s in range(1, config.max_steps + 1):
            stepper.advance(u, out)
            _check_divergence(out, W, s)
            disp, flagged = _retract_inplace(out, cr_idx, Q, config.qbar)
            if flagged.size:
                err = FlowError(f"polar retraction failed at {flagged.size} node(s) in step {s}")
                err.flagged_nodes = flagged
                raise err
            u, out = out, u
            steps_taken = s
            monitor = (s % cadence == 0) or s == config.max_steps
            if not monitor and s % period != 0:
                continue

            if s % period == 0:
                u = avg.apply(u)
                _retract_inplace(u, cr_idx, Q, config.qbar)

            if monitor:
                residual = stepper.residual(u, res_idx)
                # cycle speed between same-phase states; the convergence
                # route for interpolated averaging, whose noise floors the
                # pointwise residual
                rate = float(np.abs(u - u_prev).max()) / (config.dt * (s - s_prev))
                np.copyto(u_prev, u)
                s_prev = s
                if (residual <= config.tol_residual and disp <= config.tol_residual) or (
                    not avg.exact and rate <= config.tol_residual
                ):
                    converged = True
                act = action_edges(Field(grid, u), W)
                pos = _positivity_margin(grid.nodes, u, D)
                hist_steps.append(s)
                hist_res.append(residual)
                hist_act.append(act)
                hist_pos.append(pos)
                log.line(s, residual, act, pos)
                if log.due(s):
                    snap = u if s % period == 0 else avg.apply(u)
                    log.checkpoint(Field(grid, snap.copy()), s)
                if converged:
                    break
    finally:
        log.close()

    raw = Field(grid, u.copy())
    accepted = Field(grid, avg.apply(raw.values))
    q_cr = Q.q(u[cr_idx]) if cr_idx.size else np.empty(0)
    active = bool(q_cr.size and (np.abs(q_cr - config.qbar) <= LEVEL_TOL).any())
    return SolveResult(
        field=accepted,
        residual_history=np.asarray(hist_res),
        action_history=np.asarray(hist_act),
        constraint_active_final=active,
        steps_taken=steps_taken,
        converged=converged,
        monitor_steps=np.asarray(hist_steps, dtype=np.int64),
        pos_margin_history=np.asarray(hist_pos),
        field_raw=raw,
        qfun=Q,
        region=D,
        config=config,
    )


def release_and_flow(
    result: SolveResult,
    config: FlowConfig,
    W: Potential,
    G: ReflectionGroup,
    *,
    polish: bool | None = None,
    checkpoint_every: int = 0,
    checkpoint_dir=None,
    log_file=None,
) -> SolveResult:
    """Drop the constraint, flow for t_release, then push the residual to tol.

    Requires the constrained run to have converged with strict slack
    (max Q over C_R below qbar).  The constraint must stay strictly
    satisfied on its own after release; if it does not, the margin granted
    by L was too small and the run aborts.  Averaging stays on (it is what
    keeps the junction from drifting off).  When it needs interpolation the
    flow is run to cycle stationarity instead of a pointwise residual, and
    with polish enabled a damped Newton iteration then tries to drive the
    raw field onto the discrete solution so the final residual honestly
    meets tol_residual.  The refinement is opportunistic: at some radii the
    lattice frustrates the arm profile near the sphere and no nearby
    discrete solution exists, in which case the decline is logged and the
    cycle-stationary state stands.  polish defaults to on in one and two
    dimensions; the direct factorization it uses is too memory-hungry for
    3D grids, where cycle stationarity is the accepted convergence
    statement.
    """
    if not result.converged:
        raise FlowError("constrained run did not converge; nothing to release")
    Q, D = result.qfun, result.region
    if Q is None or D is None:
        raise FlowError("result carries no constraint function or region")
    grid = result.field_raw.grid
    u = result.field_raw.values.copy()
    if polish is None:
        polish = grid.dim <= 2

    cr_idx = np.flatnonzero(
        np.linalg.norm(grid.nodes - config.x_R, axis=1) <= config.L + 1e-12
    )
    res_idx = np.flatnonzero(grid.interior)

    def cr_max_q(vals):
        return float(Q.q(vals[cr_idx]).max()) if cr_idx.size else 0.0

    if result.constraint_active_final or cr_max_q(u) >= config.qbar:
        raise FlowError("Step-2 margin insufficient; increase L")

    log = _RunLog(log_file, checkpoint_dir, checkpoint_every)
    stepper = _Stepper(grid, W, config.dt, config.stepper)
    avg = _Averager(grid, G)
    out = np.empty_like(u)
    hist_steps, hist_res, hist_act, hist_pos = [], [], [], []
    period = config.projection_period
    cadence = _monitor_cadence(period)
    n_release = max(1, int(math.ceil(config.t_release / config.dt)))
    u_prev, s_prev = u.copy(), 0
    converged = False
    steps_taken = 0

    try:
        for s in range(1, config.max_steps + 1):
            stepper.advance(u, out)
            _check_divergence(out, W, s)
            u, out = out, u
            steps_taken = s
            monitor = (s % cadence == 0) or s == config.max_steps or s == n_release
            if not monitor and s % period != 0:
                continue

            if s % period == 0:
                u = avg.apply(u)

            if monitor:
                if cr_max_q(u) >= config.qbar:
                    raise FlowError("Step-2 margin insufficient; increase L")
                residual = stepper.residual(u, res_idx)
                rate = float(np.abs(u - u_prev).max()) / (config.dt * (s - s_prev))
                np.copyto(u_prev, u)
                s_prev = s
                if s >= n_release and (
                    residual <= config.tol_residual
                    or (not avg.exact and rate <= config.tol_residual)
                ):
                    converged = True
                act = action_edges(Field(grid, u), W)
                pos = _positivity_margin(grid.nodes, u, D)
                hist_steps.append(s)
                hist_res.append(residual)
                hist_act.append(act)
                hist_pos.append(pos)
                log.line(s, residual, act, pos)
                if log.due(s):
                    snap = u if s % period == 0 else avg.apply(u)
                    log.checkpoint(Field(grid, snap.copy()), s)
                if converged:
                    break

        if converged and polish and hist_res and hist_res[-1] > config.tol_residual:
            # Opportunistic: the run is already stationary by the cycle
            # criterion, so a refinement that cannot make headway (the
            # lattice frustrates the arm profile at some radii) is declined
            # rather than fatal.
            try:
                refined = newton_refine(
                    Field(grid, u.copy()), W, tol=config.tol_residual
                )
            except FlowError as exc:
                log.note(f"refinement declined: {exc}")
            else:
                u = refined.values.copy()
                if cr_max_q(u) >= config.qbar:
                    raise FlowError("Step-2 margin insufficient; increase L")
                residual = stepper.residual(u, res_idx)
                act = action_edges(Field(grid, u), W)
                pos = _positivity_margin(grid.nodes, u, D)
                hist_steps.append(steps_taken)
                hist_res.append(residual)
                hist_act.append(act)
                hist_pos.append(pos)
                log.line(steps_taken, residual, act, pos)
    finally:
        log.close()

    if cr_max_q(u) >= config.qbar:
        raise FlowError("Step-2 margin insufficient; increase L")

    raw = Field(grid, u.copy())
    accepted = Field(grid, avg.apply(raw.values))
    q_cr = Q.q(u[cr_idx]) if cr_idx.size else np.empty(0)
    active = bool(q_cr.size and (np.abs(q_cr - config.qbar) <= LEVEL_TOL).any())
    return SolveResult(
        field=accepted,
        residual_history=np.asarray(hist_res),
        action_history=np.asarray(hist_act),
        constraint_active_final=active,
        steps_taken=steps_taken,
        converged=converged,
        monitor_steps=np.asarray(hist_steps, dtype=np.int64),
        pos_margin_history=np.asarray(hist_pos),
        field_raw=raw,
        qfun=Q,
        region=D,
        config=config,
    )
