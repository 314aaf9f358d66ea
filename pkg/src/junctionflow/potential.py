"""Multi-well potentials with analytic derivatives, plus the convex gauge Q
and polar coordinates (q, nu) around the distinguished minimum.

Evaluators are vectorized over a trailing component axis: w maps (..., n) to
(...), grad maps (..., n) to (..., n), hess maps (..., n) to (..., n, n).
Everything here is a pure function of its inputs; the dataclasses freeze
their payload at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc


class PotentialError(Exception):
    pass


class PolarError(Exception):
    pass


FD_STEP = 1e-5
SEED_EPS = 1e-6


@dataclass(frozen=True)
class Potential:
    """A nonnegative multi-well energy density with its derivatives.

    minima holds the zero set with the distinguished minimum first; r0 and c
    describe the largest sampled ball around each minimum on which the
    Hessian stays at least c^2 * Id; bound_radius is a sampled radius b such
    that the well structure is confined to {|u| < b}.
    """

    dim: int
    w: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    minima: np.ndarray
    r0: float
    c: float
    bound_radius: float

    def __post_init__(self):
        m = np.asarray(self.minima, float).reshape(-1, self.dim)
        m.flags.writeable = False
        object.__setattr__(self, "minima", m)

    @property
    def a1(self) -> np.ndarray:
        return self.minima[0]


@dataclass(frozen=True)
class QFunction:
    """Convex gauge vanishing at base, growing like |u - base| to first order."""

    q: Callable[[np.ndarray], np.ndarray]
    qgrad: Callable[[np.ndarray], np.ndarray]
    base: np.ndarray
    radial: bool = False

    def __post_init__(self):
        b = np.asarray(self.base, float).copy()
        b.flags.writeable = False
        object.__setattr__(self, "base", b)


def radial_q(base) -> QFunction:
    """The default gauge q(u) = |u - base| (exact polar map, no integration)."""
    base = np.asarray(base, float)

    def q(u):
        return np.linalg.norm(np.asarray(u, float) - base, axis=-1)

    def qgrad(u):
        v = np.asarray(u, float) - base
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return np.divide(v, n, out=np.zeros_like(v), where=n > 0)

    return QFunction(q=q, qgrad=qgrad, base=base, radial=True)


# ---------------------------------------------------------------------------
# built-in potentials


def _triple_well() -> dict:
    # W = |u|^4 + 2 u1 u2^2 - (2/3) u1^3 - |u|^2 + 2/3 on R^2
    root32 = math.sqrt(3.0) / 2.0

    def w(u):
        u = np.asarray(u, float)
        u1, u2 = u[..., 0], u[..., 1]
        s = u1 * u1 + u2 * u2
        return s * s + 2.0 * u1 * u2 * u2 - (2.0 / 3.0) * u1 ** 3 - s + 2.0 / 3.0

    def grad(u):
        u = np.asarray(u, float)
        u1, u2 = u[..., 0], u[..., 1]
        s = u1 * u1 + u2 * u2
        g1 = 4.0 * s * u1 + 2.0 * u2 * u2 - 2.0 * u1 * u1 - 2.0 * u1
        g2 = 4.0 * s * u2 + 4.0 * u1 * u2 - 2.0 * u2
        return np.stack([g1, g2], axis=-1)

    def hess(u):
        u = np.asarray(u, float)
        u1, u2 = u[..., 0], u[..., 1]
        s = u1 * u1 + u2 * u2
        h11 = 4.0 * s + 8.0 * u1 * u1 - 4.0 * u1 - 2.0
        h12 = 8.0 * u1 * u2 + 4.0 * u2
        h22 = 4.0 * s + 8.0 * u2 * u2 + 4.0 * u1 - 2.0
        out = np.empty(u.shape[:-1] + (2, 2))
        out[..., 0, 0] = h11
        out[..., 0, 1] = h12
        out[..., 1, 0] = h12
        out[..., 1, 1] = h22
        return out

    minima = np.array([[1.0, 0.0], [-0.5, root32], [-0.5, -root32]])
    return dict(dim=2, w=w, grad=grad, hess=hess, minima=minima)


def _quadruple_well() -> dict:
    # W = |u|^4 - (4/sqrt3)(u1^2 - u2^2) u3 - (2/3)|u|^2 + 5/9 on R^3
    s3 = math.sqrt(3.0)
    s23 = math.sqrt(2.0 / 3.0)

    def w(u):
        u = np.asarray(u, float)
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        s = u1 * u1 + u2 * u2 + u3 * u3
        return s * s - (4.0 / s3) * (u1 * u1 - u2 * u2) * u3 - (2.0 / 3.0) * s + 5.0 / 9.0

    def grad(u):
        u = np.asarray(u, float)
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        s = u1 * u1 + u2 * u2 + u3 * u3
        g1 = 4.0 * s * u1 - (8.0 / s3) * u1 * u3 - (4.0 / 3.0) * u1
        g2 = 4.0 * s * u2 + (8.0 / s3) * u2 * u3 - (4.0 / 3.0) * u2
        g3 = 4.0 * s * u3 - (4.0 / s3) * (u1 * u1 - u2 * u2) - (4.0 / 3.0) * u3
        return np.stack([g1, g2, g3], axis=-1)

    def hess(u):
        u = np.asarray(u, float)
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        s = u1 * u1 + u2 * u2 + u3 * u3
        out = np.empty(u.shape[:-1] + (3, 3))
        out[..., 0, 0] = 4.0 * s + 8.0 * u1 * u1 - (8.0 / s3) * u3 - 4.0 / 3.0
        out[..., 1, 1] = 4.0 * s + 8.0 * u2 * u2 + (8.0 / s3) * u3 - 4.0 / 3.0
        out[..., 2, 2] = 4.0 * s + 8.0 * u3 * u3 - 4.0 / 3.0
        out[..., 0, 1] = out[..., 1, 0] = 8.0 * u1 * u2
        out[..., 0, 2] = out[..., 2, 0] = 8.0 * u1 * u3 - (8.0 / s3) * u1
        out[..., 1, 2] = out[..., 2, 1] = 8.0 * u2 * u3 + (8.0 / s3) * u2
        return out

    third = 1.0 / s3
    minima = np.array([
        [s23, 0.0, third],
        [-s23, 0.0, third],
        [0.0, s23, -third],
        [0.0, -s23, -third],
    ])
    return dict(dim=3, w=w, grad=grad, hess=hess, minima=minima)


def _double_well_1d() -> dict:
    # W = (u^2 - 1)^2 / 4 on R^1
    def w(u):
        u0 = np.asarray(u, float)[..., 0]
        return 0.25 * (u0 * u0 - 1.0) ** 2

    def grad(u):
        u0 = np.asarray(u, float)[..., 0]
        return (u0 ** 3 - u0)[..., None]

    def hess(u):
        u0 = np.asarray(u, float)[..., 0]
        return (3.0 * u0 * u0 - 1.0)[..., None, None]

    return dict(dim=1, w=w, grad=grad, hess=hess, minima=np.array([[1.0], [-1.0]]))


def _ball_samples(dim: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy points filling the unit ball."""
    pts = qmc.Halton(d=dim, scramble=False, seed=seed).random(4 * n) * 2.0 - 1.0
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0][:n]
    return pts


@dataclass(frozen=True)
class CEstimate:
    c: float
    r0_max: float
    degenerate: bool


def estimate_c(pot_or_hess, a_i, r0: float, n_samples: int = 512) -> CEstimate:
    """Sampled uniform convexity constant on the ball |u - a_i| <= r0.

    c is the square root of the smallest Hessian eigenvalue over the sampled
    ball, clipped at zero; r0_max is the largest radius (bisection to 1e-3)
    at which the sampled c stays positive.  degenerate flags c == 0.
    """
    hess = pot_or_hess.hess if isinstance(pot_or_hess, Potential) else pot_or_hess
    a_i = np.asarray(a_i, float)
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    ball = _ball_samples(a_i.shape[0], n_samples)
    ball = np.vstack([np.zeros((1, a_i.shape[0])), ball])

    def min_eig(r):
        h = hess(a_i + r * ball)
        return float(np.linalg.eigvalsh(h)[..., 0].min())

    me = min_eig(r0)
    c = math.sqrt(me) if me > 0 else 0.0

    lo, hi = 0.0, r0
    if me > 0:
        # grow until degenerate or clearly past the well
        hi = r0
        while min_eig(hi * 2.0) > 0 and hi < 64.0 * r0:
            hi *= 2.0
        if min_eig(hi * 2.0) > 0:
            r0_max = hi * 2.0
            return CEstimate(c=c, r0_max=r0_max, degenerate=False)
        lo, hi = hi, hi * 2.0
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if min_eig(mid) > 0:
            lo = mid
        else:
            hi = mid
    return CEstimate(c=c, r0_max=lo, degenerate=c == 0.0)


def _finalize(raw: dict, name: str) -> Potential:
    minima = raw["minima"]
    dim = raw["dim"]
    # pairwise gap caps the nondegeneracy radius when several wells exist
    if len(minima) > 1:
        gaps = np.linalg.norm(minima[:, None] - minima[None, :], axis=2)
        cap = 0.5 * float(gaps[gaps > 0].min())
    else:
        cap = 1.0
    r0 = cap
    c = 0.0
    for a in minima:
        est = estimate_c(raw["hess"], a, cap)
        r0 = min(r0, est.r0_max)
    r0 = min(r0, cap)
    eig_floor = math.inf
    ball = _ball_samples(dim, 512)
    for a in minima:
        h = raw["hess"](a + r0 * np.vstack([np.zeros((1, dim)), ball]))
        eig_floor = min(eig_floor, float(np.linalg.eigvalsh(h)[..., 0].min()))
    c = math.sqrt(max(eig_floor, 0.0))
    if c == 0.0:
        raise PotentialError(f"{name}: Hessian degenerates at a minimum")

    amax = float(np.linalg.norm(minima, axis=1).max())
    b = 1.0 + 1.5 * amax
    # confinement check: the energy on the b-sphere dominates the well shell
    sphere = _ball_samples(dim, 256, seed=3)
    sphere = sphere[np.linalg.norm(sphere, axis=1) > 1e-6]
    sphere = sphere / np.linalg.norm(sphere, axis=1, keepdims=True)
    if amax > 0 and raw["w"](b * sphere).min() <= raw["w"](amax * sphere).max():
        raise PotentialError(f"{name}: bound radius {b} does not confine the wells")
    return Potential(dim=dim, w=raw["w"], grad=raw["grad"], hess=raw["hess"],
                     minima=minima, r0=float(r0), c=float(c), bound_radius=float(b))


_BUILTIN_FACTORIES = {
    "triple-well-2d": _triple_well,
    "quadruple-well-3d": _quadruple_well,
    "double-well-1d": _double_well_1d,
}
_REGISTRY: dict = {}


def register_potential(key: str, *, w, grad, hess, minima) -> Potential:
    """Extension point: register an externally supplied evaluator triple."""
    pot = _finalize(dict(dim=np.asarray(minima, float).shape[-1], w=w, grad=grad,
                         hess=hess, minima=np.asarray(minima, float)), key)
    _REGISTRY[key] = pot
    return pot


def builtin_potential(name: str) -> Potential:
    if name in _REGISTRY:
        return _REGISTRY[name]
    if name not in _BUILTIN_FACTORIES:
        known = sorted(set(_BUILTIN_FACTORIES) | set(_REGISTRY))
        raise ValueError(f"unknown potential {name!r}; known: {known}")
    pot = _finalize(_BUILTIN_FACTORIES[name](), name)
    _REGISTRY[name] = pot
    return pot


# ---------------------------------------------------------------------------
# sampled hypothesis checks


def check_invariance(pot: Potential, group, samples: Optional[np.ndarray] = None) -> float:
    """Worst |W(g u) - W(u)| over samples and group elements."""
    if group.dim != pot.dim:
        raise ValueError("group and potential dimensions differ")
    if samples is None:
        samples = (_ball_samples(pot.dim, 256, seed=1)) * pot.bound_radius
    samples = np.asarray(samples, float).reshape(-1, pot.dim)
    base = pot.w(samples)
    moved = pot.w(group.apply(samples))
    return float(np.abs(moved - base).max())


def _cone_ball_samples(cone, center, radius, n, seed=2, exclude=1e-8):
    dim = center.shape[0]
    out = []
    halton = qmc.Halton(d=dim, scramble=False, seed=seed)
    for _ in range(64):
        pts = center + (halton.random(4 * n) * 2.0 - 1.0) * radius
        d = np.linalg.norm(pts - center, axis=1)
        pts = pts[(d <= radius) & (d > exclude)]
        pts = pts[cone.contains(pts)]
        out.append(pts)
        if sum(len(p) for p in out) >= n:
            break
    pts = np.vstack(out)
    if len(pts) == 0:
        raise ValueError("no samples landed in the cone; is the center inside?")
    return pts[:n]


def check_q_monotonicity(pot: Potential, Q: QFunction, D, samples=None,
                         radius: float = 3.0, n: int = 2048) -> float:
    """min <Q_u, W_u> over D intersected with a ball at the base point.

    Nonnegative means the energy cannot decrease along the gauge's outward
    direction anywhere in the region, which is what makes q o u subharmonic
    downstream.
    """
    if samples is None:
        samples = _cone_ball_samples(D, np.asarray(Q.base, float), radius, n)
    samples = np.asarray(samples, float).reshape(-1, pot.dim)
    dots = np.einsum("ij,ij->i", Q.qgrad(samples), pot.grad(samples))
    return float(dots.min())


def check_q_convexity(Q: QFunction, D, radius: float = 3.0, n_pairs: int = 10000) -> float:
    """Worst midpoint-convexity violation of q over sampled pairs in D."""
    pts = _cone_ball_samples(D, np.asarray(Q.base, float), radius, 2 * n_pairs, exclude=0.0)
    u, v = pts[:n_pairs], pts[n_pairs:2 * n_pairs]
    m = min(len(u), len(v))
    u, v = u[:m], v[:m]
    gap = 0.5 * (Q.q(u) + Q.q(v)) - Q.q(0.5 * (u + v))
    return float(gap.min())


# ---------------------------------------------------------------------------
# polar coordinates around the base minimum


class _Ray:
    """One integrated trajectory q -> u~(q; nu), frozen after construction.

    Integrated in s = ln q: the right-hand side direction turns on the
    length scale q near the seed, so a log substitution makes the step
    count independent of how small the seed is.  Steps are accepted on the
    local level-set increment |Q(u') - Q(u) - dq|, keeping the accumulated
    residual well under 1e-9 per unit q.
    """

    __slots__ = ("nu", "q0", "ss", "us", "rhs", "base")

    _LOCAL_TOL = 2e-10  # relative to the q increment of the step
    _MAX_STEPS = 500_000

    def __init__(self, Q: QFunction, nu: np.ndarray, q_max: float):
        self.nu = nu
        self.base = np.asarray(Q.base, float)

        def rhs(u):
            g = Q.qgrad(u)
            n2 = float(g @ g)
            if n2 < 1e-24:
                raise PolarError("gradient of Q vanished along the trajectory")
            return g / n2

        self.rhs = rhs
        u = self.base + SEED_EPS * nu
        q = float(Q.q(u))
        if not q > 0:
            raise PolarError("seed point sits on the zero level set")
        self.q0 = q
        s, s_end = math.log(q), math.log(q_max)
        ss, us = [s], [u.copy()]
        hs = 0.02
        steps = 0
        while s < s_end:
            hs = min(hs, s_end - s)
            u_new = _rk4_log(rhs, u, s, hs)
            dq = math.exp(s + hs) - math.exp(s)
            err = abs(float(Q.q(u_new)) - float(Q.q(u)) - dq)
            # measuring Q near the base cancels against |base|, so the
            # budget cannot be tighter than float noise on that scale
            budget = max(self._LOCAL_TOL * dq, 5e-15 * (1.0 + float(np.abs(self.base).max())))
            steps += 1
            if steps > self._MAX_STEPS:
                raise PolarError("polar integration exceeded the step budget; "
                                 "Q may be too rough near the base point")
            if err > budget and hs > 1e-6:
                hs *= 0.5
                continue
            s += hs
            u = u_new
            ss.append(s)
            us.append(u.copy())
            if err < 0.02 * budget:
                hs *= 1.5
        self.ss = np.array(ss)
        self.us = np.array(us)

    def eval(self, q: float) -> np.ndarray:
        if q <= self.q0:
            return self.base + (q / self.q0) * (self.us[0] - self.base)
        s = math.log(q)
        if s > self.ss[-1] + 1e-12:
            raise PolarError(f"q={q} beyond integrated range {math.exp(self.ss[-1])}")
        i = int(np.searchsorted(self.ss, s, side="right") - 1)
        i = min(i, len(self.ss) - 1)
        ds = s - self.ss[i]
        if ds <= 0:
            return self.us[i]
        return _rk4_log(self.rhs, self.us[i], self.ss[i], ds)


def _rk4_log(rhs, u, s, hs):
    # du/ds = e^s * rhs(u)
    k1 = math.exp(s) * rhs(u)
    k2 = math.exp(s + 0.5 * hs) * rhs(u + 0.5 * hs * k1)
    k3 = math.exp(s + 0.5 * hs) * rhs(u + 0.5 * hs * k2)
    k4 = math.exp(s + hs) * rhs(u + hs * k3)
    return u + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class PolarMap:
    """Evaluates u~(q; nu) and its derivatives for a gauge Q.

    The radial gauge has closed forms (u~ = base + q nu); any other gauge is
    integrated with adaptive RK4 holding |Q(u~) - q| below 1e-10 per step,
    and directional derivatives come from centered differences at step 1e-5.
    """

    def __init__(self, Q: QFunction, q_max: float = 3.0, fd_step: float = FD_STEP):
        self.Q = Q
        self.base = np.asarray(Q.base, float)
        self.q_max = q_max
        self.h = fd_step
        self._rays: dict = {}

    def _ray(self, nu: np.ndarray) -> _Ray:
        key = np.round(nu, 14).tobytes()
        if key not in self._rays:
            self._rays[key] = _Ray(self.Q, nu, self.q_max)
        return self._rays[key]

    def eval(self, q: float, nu) -> np.ndarray:
        nu = _unit(nu)
        if self.Q.radial:
            return self.base + q * nu
        return self._ray(nu).eval(q)

    def u_q(self, q: float, nu) -> np.ndarray:
        nu = _unit(nu)
        if self.Q.radial:
            return nu
        r = self._ray(nu)
        return r.rhs(r.eval(q))

    def u_qq(self, q: float, nu) -> np.ndarray:
        nu = _unit(nu)
        if self.Q.radial:
            return np.zeros_like(nu)
        r = self._ray(nu)
        return (r.rhs(r.eval(q + self.h)) - r.rhs(r.eval(q - self.h))) / (2.0 * self.h)

    def u_nu(self, q: float, nu, t) -> np.ndarray:
        """Directional derivative in the direction t, <t, nu> = 0."""
        nu, t = _unit(nu), np.asarray(t, float)
        if self.Q.radial:
            return q * t
        up = self.eval(q, _unit(nu + self.h * t))
        dn = self.eval(q, _unit(nu - self.h * t))
        return (up - dn) / (2.0 * self.h)

    def u_qnu(self, q: float, nu, t) -> np.ndarray:
        nu, t = _unit(nu), np.asarray(t, float)
        if self.Q.radial:
            return np.asarray(t, float).copy()
        return (self.u_q(q, _unit(nu + self.h * t)) - self.u_q(q, _unit(nu - self.h * t))) / (2.0 * self.h)

    def u_nunu(self, q: float, nu, t) -> np.ndarray:
        nu, t = _unit(nu), np.asarray(t, float)
        if self.Q.radial:
            return np.zeros_like(nu)
        up = self.eval(q, _unit(nu + self.h * t))
        dn = self.eval(q, _unit(nu - self.h * t))
        return (up - 2.0 * self.eval(q, nu) + dn) / (self.h ** 2)


def _unit(v):
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n < 1e-14:
        raise ValueError("direction vector is numerically zero")
    return v / n


def polar_map(Q: QFunction, nu, q_max: float = 3.0) -> PolarMap:
    """Polar map seeded along nu; evaluate with .eval(q, nu) and friends."""
    pm = PolarMap(Q, q_max=q_max)
    if not Q.radial:
        pm._ray(_unit(nu))  # integrate now so construction errors surface here
    return pm


@dataclass(frozen=True)
class VEval:
    V: float
    V_q: float


def eval_V(pot: Potential, pm: PolarMap, q: float, nu) -> VEval:
    """Energy density along the polar map, with its q-derivative by centered
    differences."""
    if q <= 0:
        raise ValueError("q must be positive")
    nu = _unit(nu)
    V = float(pot.w(pm.eval(q, nu)))
    h = min(FD_STEP, 0.5 * q)
    Vp = float(pot.w(pm.eval(q + h, nu)))
    Vm = float(pot.w(pm.eval(q - h, nu)))
    return VEval(V=V, V_q=(Vp - Vm) / (2.0 * h))


def check_V_monotone(pot: Potential, pm: PolarMap, directions, qs) -> tuple[float, float]:
    """(min V_q, min V_q - c^2 <u_q, u_q> q) over directions and q <= r0.

    The first should be nonnegative everywhere sampled; the second is the
    uniform-convexity floor that only applies inside the r0 ball.
    """
    min_vq = math.inf
    min_margin = math.inf
    for nu in np.atleast_2d(directions):
        for q in np.atleast_1d(qs):
            ev = eval_V(pot, pm, float(q), nu)
            min_vq = min(min_vq, ev.V_q)
            if q <= pot.r0:
                uq = pm.u_q(float(q), nu)
                min_margin = min(min_margin, ev.V_q - pot.c ** 2 * float(uq @ uq) * float(q))
    return min_vq, min_margin


def check_polar_form(pm: PolarMap, samples=None, n_dirs: int = 12, n_tangents: int = 4,
                     qs=None) -> float:
    """Minimum of the second-order form over the (alpha, beta) circle.

    For each sampled (q, nu, t) the form
        -<u_qq, u_q> a^2 + <u_qnu t, u_nu t> b^2 - 2 <u_qnu t, u_q> a b
    is a 2x2 quadratic; its exact minimum on a^2 + b^2 = 1 is the smaller
    eigenvalue, so no sampling of (a, b) is needed.
    """
    dim = pm.base.shape[0]
    if samples is None:
        if qs is None:
            qs = np.geomspace(1e-3, pm.q_max * 0.9, 8)
        if dim == 1:
            dirs = np.array([[1.0], [-1.0]])
            tangents = [np.zeros(1)]
            samples = [(q, nu, tangents[0]) for nu in dirs for q in qs]
        else:
            raw = qmc.Halton(d=dim, scramble=False, seed=5).random(n_dirs * 3) * 2 - 1
            raw = raw[np.linalg.norm(raw, axis=1) > 1e-3][:n_dirs]
            dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            traw = qmc.Halton(d=dim, scramble=False, seed=7).random(n_tangents) * 2 - 1
            samples = []
            for nu in dirs:
                for tv in traw:
                    t = tv - (tv @ nu) * nu
                    if np.linalg.norm(t) < 1e-6:
                        continue
                    t = t / np.linalg.norm(t)
                    samples.extend((float(q), nu, t) for q in qs)
    worst = math.inf
    for q, nu, t in samples:
        uq = pm.u_q(q, nu)
        if np.linalg.norm(t) == 0.0:
            worst = min(worst, -float(pm.u_qq(q, nu) @ uq))
            continue
        a11 = -float(pm.u_qq(q, nu) @ uq)
        unut = pm.u_nu(q, nu, t)
        uqnut = pm.u_qnu(q, nu, t)
        a22 = float(uqnut @ unut)
        a12 = -float(uqnut @ uq)
        disc = math.sqrt(((a11 - a22) * 0.5) ** 2 + a12 * a12)
        worst = min(worst, (a11 + a22) * 0.5 - disc)
    return worst
