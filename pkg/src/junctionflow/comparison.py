"""Radial comparison profiles for sizing the constraint collar.

Three one-dimensional radial profiles drive the release argument: a core
profile that decays like the linearized equation inside the collar ball, a
harmonic collar profile spanning the shell outside it, and a harmonic
bridge across the interface between the two.  find_step2_constants
searches for the smallest collar length at which the bridge's slope
separates from both neighbors by a safety margin, which is the quantity
that guarantees the cap stays strict after the constraint is dropped.

All profiles are radial, so each solve is a two-point problem in r with
an effective dimension d_eff: the collar and bridge have closed forms
(A + B r^(2-d), with log r in two dimensions) while the core profile is
integrated by fixed-step RK4 from the regular center, rescaling the
running history so large decay exponents never overflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline


class ComparisonError(RuntimeError):
    """Raised for invalid profile parameters or an unworkable regime."""


N_STEPS = 10_000          # RK4 steps per core-profile solve
RESCALE_CAP = 1e100       # renormalize the running solution above this
LAMBDA_DEFAULT = 0.25     # fraction of the slope budget ceded to slack
L_MAX = 1e4               # give up on collar lengths beyond this
CHAIN_SAMPLES = 201       # pointwise checks across the bridge annulus


@dataclass(frozen=True)
class RadialProfile:
    """Sampled radial profile with evaluators valid slightly beyond interval.

    boundary records the data that pinned the solve; value and deriv
    evaluate the underlying solution (closed form, or dense interpolation
    of the integrated core profile).
    """

    d_eff: int
    interval: tuple[float, float]
    r: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    boundary: dict
    _value_fn: object = field(repr=False, compare=False)
    _deriv_fn: object = field(repr=False, compare=False)

    def value(self, r):
        return self._value_fn(np.asarray(r, float))

    def deriv(self, r):
        return self._deriv_fn(np.asarray(r, float))


def _integrate_core(c: float, d_eff: int, r_max: float, n_steps: int):
    """Regular solution of y'' + (d_eff-1) y'/r = c^2 y on [0, r_max].

    Returns (r, y, v) with y(0) = 1 up to a common positive rescaling
    (the caller normalizes, so only ratios matter).  The center is regular:
    y'(0) = 0 and the limiting acceleration there is c^2 y / d_eff.
    """
    h = r_max / n_steps
    cc = c * c
    dm1 = d_eff - 1

    def acc(r, y, v):
        if r <= 0.0:
            return cc * y / d_eff
        return cc * y - dm1 * v / r

    rs = np.linspace(0.0, r_max, n_steps + 1)
    ys = np.empty(n_steps + 1)
    vs = np.empty(n_steps + 1)
    y, v = 1.0, 0.0
    ys[0], vs[0] = y, v
    for i in range(n_steps):
        r = rs[i]
        k1y, k1v = v, acc(r, y, v)
        k2y, k2v = v + 0.5 * h * k1v, acc(r + 0.5 * h, y + 0.5 * h * k1y, v + 0.5 * h * k1v)
        k3y, k3v = v + 0.5 * h * k2v, acc(r + 0.5 * h, y + 0.5 * h * k2y, v + 0.5 * h * k2v)
        k4y, k4v = v + h * k3v, acc(r + h, y + h * k3y, v + h * k3v)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        v += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if y > RESCALE_CAP:
            scale = 1.0 / y
            ys[: i + 1] *= scale
            vs[: i + 1] *= scale
            y, v = 1.0, v * scale
        ys[i + 1], vs[i + 1] = y, v
    return rs, ys, vs


def _interp_pair(rs, ys, vs, accs):
    # Hermite cubics on the integrator samples: one for the values anchored
    # by the slopes, one for the slopes anchored by the accelerations, so
    # off-node evaluation keeps the integrator's accuracy.
    val = CubicHermiteSpline(rs, ys, vs)
    der = CubicHermiteSpline(rs, vs, accs)

    def value(r):
        return val(r)

    def deriv(r):
        return der(r)

    return value, deriv


def solve_psi1(
    c: float, qbar: float, L: float, d_eff: int, *,
    n_steps: int = N_STEPS, r_max: float | None = None,
) -> RadialProfile:
    """Core profile: y'' + (d_eff-1) y'/r = c^2 y, regular center, y(L) = qbar.

    Integrates to r_max (default L; a larger r_max extends the evaluators
    past L while the normalization stays pinned at L, which the constants
    search uses to compare slopes across the whole bridge annulus).
    Exponents beyond the overflow range are handled by rescaling the
    running history, so decay products like c*L in the hundreds are fine.
    """
    if c <= 0.0 or L <= 0.0 or qbar <= 0.0:
        raise ComparisonError("c, qbar, and L must be positive")
    if d_eff not in (1, 2, 3):
        raise ComparisonError("d_eff must be 1, 2, or 3")
    span = r_max if r_max is not None else L
    if span < L:
        raise ComparisonError("r_max must not cut off the interval")
    rs, ys, vs = _integrate_core(c, d_eff, span, n_steps)
    accs = c * c * ys
    accs[1:] -= (d_eff - 1) * vs[1:] / rs[1:]
    accs[0] /= d_eff
    pre_val, _ = _interp_pair(rs, ys, vs, accs)
    scale = qbar / float(pre_val(L))
    ys = ys * scale
    vs = vs * scale
    accs = accs * scale
    val, der = _interp_pair(rs, ys, vs, accs)
    keep = rs <= L + 1e-12
    return RadialProfile(
        d_eff=d_eff,
        interval=(0.0, L),
        r=rs[keep],
        values=ys[keep],
        derivs=vs[keep],
        boundary={"kind": "core", "c": c, "qbar": qbar, "L": L},
        _value_fn=val,
        _deriv_fn=der,
    )


def _harmonic_coeffs(r_a: float, v_a: float, r_b: float, v_b: float, d_eff: int):
    """A, B with psi = A + B g(r) through the two boundary points.

    g(r) is r for d_eff=1, log r for d_eff=2, and -1/r for d_eff=3 (each a
    radial harmonic with positive derivative, so B keeps the sign of the
    boundary increment).
    """
    if d_eff == 1:
        g = lambda r: r
        dg = lambda r: np.ones_like(np.asarray(r, float))
    elif d_eff == 2:
        g = np.log
        dg = lambda r: 1.0 / np.asarray(r, float)
    else:
        g = lambda r: -1.0 / np.asarray(r, float)
        dg = lambda r: 1.0 / np.asarray(r, float) ** 2
    B = (v_b - v_a) / (g(r_b) - g(r_a))
    A = v_a - B * g(r_a)
    return A, B, g, dg


def _harmonic_profile(r_a, v_a, r_b, v_b, d_eff, boundary) -> RadialProfile:
    A, B, g, dg = _harmonic_coeffs(r_a, v_a, r_b, v_b, d_eff)
    rs = np.linspace(r_a, r_b, 2001)

    def val(r):
        return A + B * g(r)

    def der(r):
        return B * dg(r)

    return RadialProfile(
        d_eff=d_eff,
        interval=(float(r_a), float(r_b)),
        r=rs,
        values=val(rs),
        derivs=der(rs),
        boundary=boundary,
        _value_fn=val,
        _deriv_fn=der,
    )


def solve_psi2(qbar: float, b: float, L: float, l: float, d_eff: int) -> RadialProfile:
    """Collar profile: radial harmonic on [L, L+l] with values qbar and b."""
    if b <= qbar:
        raise ComparisonError("the far boundary value b must exceed qbar")
    if L <= 0.0 or l <= 0.0:
        raise ComparisonError("L and l must be positive")
    if d_eff not in (1, 2, 3):
        raise ComparisonError("d_eff must be 1, 2, or 3")
    return _harmonic_profile(
        L, qbar, L + l, b, d_eff,
        {"kind": "collar", "qbar": qbar, "b": b, "L": L, "l": l},
    )


def solve_psi3(
    profile1: RadialProfile, profile2: RadialProfile, L: float, delta: float,
    d_eff: int,
) -> RadialProfile:
    """Bridge profile: radial harmonic on [L-delta, L+delta].

    The boundary data are read off the neighbors at the inner edge: the
    core profile's value at L-delta on the left and the collar profile's
    value at L-delta on the right (the collar's closed form extends below
    its interval, which is what makes that reading well defined).
    """
    if not (0.0 < delta < L):
        raise ComparisonError("delta must lie strictly between 0 and L")
    if d_eff not in (1, 2, 3):
        raise ComparisonError("d_eff must be 1, 2, or 3")
    v_a = float(profile1.value(L - delta))
    v_b = float(profile2.value(L - delta))
    return _harmonic_profile(
        L - delta, v_a, L + delta, v_b, d_eff,
        {"kind": "bridge", "L": L, "delta": delta, "left": v_a, "right": v_b},
    )


def _chain_margins(core, collar, bridge, L, delta):
    """Worst slope separations across the bridge annulus.

    Returns (steep, shallow): the minimum over the annulus of the core
    slope minus the bridge slope, and of the bridge slope minus the collar
    slope.  Both must clear the safety margin for the squeeze to work.
    """
    rs = np.linspace(L - delta, L + delta, CHAIN_SAMPLES)
    d_core = core.deriv(rs)
    d_collar = collar.deriv(rs)
    d_bridge = bridge.deriv(rs)
    steep = float((d_core - d_bridge).min())
    shallow = float((d_bridge - d_collar).min())
    return steep, shallow


def find_step2_constants(
    c: float, qbar: float, b: float, d_eff: int, *, lam: float = LAMBDA_DEFAULT,
) -> tuple[float, float, float]:
    """Smallest collar length whose slope chain clears the safety margin.

    Scans with l = L: for candidate lengths L the core profile (extended
    across the bridge), the collar profile on [L, 2L], and the bridge over
    a grid of half-widths delta are compared pointwise; a length is
    workable when, for some delta, the core exceeds the bridge and the
    bridge exceeds the collar in slope, each by at least
    (1/2 - lam) * c * qbar everywhere on the annulus.  The start length is
    bracketed by doubling upward until workable (or downward toward zero
    when it already works; tiny lengths always fail because the collar
    slope (b - qbar) / L blows up while the core slope stays bounded), and
    the bracket is bisected to 1%.  Returns the smallest workable L0 with
    its best delta and the achieved margin (minimum of the two chains).
    A regime where nothing below 10^4 works raises ComparisonError: the
    decay rate c, cap qbar, and far value b are mutually inconsistent.
    """
    if not (0.0 < lam < 0.5):
        raise ComparisonError("lam must lie in (0, 1/2)")
    if c <= 0.0 or qbar <= 0.0:
        raise ComparisonError("c and qbar must be positive")
    if b <= qbar:
        raise ComparisonError("the far boundary value b must exceed qbar")
    if d_eff not in (1, 2, 3):
        raise ComparisonError("d_eff must be 1, 2, or 3")
    target = (0.5 - lam) * c * qbar
    delta_fracs = np.logspace(-3, -1, 13)

    def probe(L):
        """Best (margin, delta) at this length; margin is min of both chains."""
        d_max = float(delta_fracs[-1]) * L
        core = solve_psi1(
            c, qbar, L, d_eff,
            n_steps=N_STEPS + N_STEPS // 10, r_max=L + d_max,
        )
        collar = solve_psi2(qbar, b, L, L, d_eff)
        best = (-math.inf, 0.0)
        for frac in delta_fracs:
            delta = float(frac) * L
            bridge = solve_psi3(core, collar, L, delta, d_eff)
            steep, shallow = _chain_margins(core, collar, bridge, L, delta)
            margin = min(steep, shallow)
            if margin > best[0]:
                best = (margin, delta)
        return best

    start = max(1.0 / c, qbar)
    margin, delta = probe(start)
    if margin >= target:
        lo, feasible = 0.0, (start, delta, margin)
    else:
        lo, L, feasible = start, 2.0 * start, None
        while L <= L_MAX:
            margin, delta = probe(L)
            if margin >= target:
                feasible = (L, delta, margin)
                break
            lo = L
            L *= 2.0
        if feasible is None:
            raise ComparisonError(
                f"no collar length up to {L_MAX:g} separates the slopes by "
                f"{target:.3e}; c={c:g}, qbar={qbar:g}, b={b:g} are inconsistent"
            )
    hi, delta_hi, margin_hi = feasible
    while hi - lo > 0.01 * hi:
        mid = 0.5 * (lo + hi)
        margin, delta = probe(mid)
        if margin >= target:
            hi, delta_hi, margin_hi = mid, delta, margin
        else:
            lo = mid
    return hi, delta_hi, margin_hi


def step2_report(
    c: float, qbar: float, b: float, d_eff: int, *, lam: float = LAMBDA_DEFAULT,
) -> dict:
    """Constants search plus the per-chain margins, as a JSON-ready dict.

    bridge_cap is the value ceiling qbar * (1 - (1/2 - lam) * c * delta)
    and sandwich_holds records whether the bridge stays below it.  At the
    smallest workable length the collar slope is at most (2/3) * lam * c *
    qbar (the shallow chain pins it) while the ceiling asks for at least
    (1/2 - lam) * c * qbar, so the flag can only come on for lam >= 0.3;
    with the default lam it documents the gap rather than a failure.
    """
    L0, delta, margin = find_step2_constants(c, qbar, b, d_eff, lam=lam)
    core = solve_psi1(
        c, qbar, L0, d_eff,
        n_steps=N_STEPS + N_STEPS // 10, r_max=1.1 * L0,
    )
    collar = solve_psi2(qbar, b, L0, L0, d_eff)
    bridge = solve_psi3(core, collar, L0, delta, d_eff)
    steep, shallow = _chain_margins(core, collar, bridge, L0, delta)
    return {
        "c": c,
        "qbar": qbar,
        "b": b,
        "d_eff": d_eff,
        "lambda": lam,
        "L0": L0,
        "delta": delta,
        "margin": margin,
        "margin_core_over_bridge": steep,
        "margin_bridge_over_collar": shallow,
        "target": (0.5 - lam) * c * qbar,
        "bridge_max": float(bridge.values.max()),
        "bridge_cap": qbar * (1.0 - (0.5 - lam) * c * delta),
        "sandwich_holds": bool(
            float(bridge.values.max()) <= qbar * (1.0 - (0.5 - lam) * c * delta)
        ),
    }


def save_constants(report: dict, path) -> Path:
    out = Path(path)
    out.write_text(json.dumps(report, indent=2) + "\n")
    return out


def save_profile(profile: RadialProfile, path) -> Path:
    """Write the sampled profile as CSV rows (r, psi, dpsi)."""
    out = Path(path)
    table = np.column_stack([profile.r, profile.values, profile.derivs])
    np.savetxt(out, table, fmt="%.17g", delimiter=",", header="r,psi,dpsi")
    return out
