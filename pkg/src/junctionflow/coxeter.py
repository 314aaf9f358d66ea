"""Finite reflection group algebra.

Roots, group enumeration by closure, the fundamental cone F, orbits and
stabilizers of a base minimum a1, and the cone D obtained as the interior
of the union of stabilizer copies of F-bar.  Everything here is plain
linear algebra on small orthogonal matrices; groups of order up to a few
hundred are enumerated in milliseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

UNIT_TOL = 1e-12
DEDUP_DECIMALS = 10
MEMBERSHIP_TOL = 1e-10
DEFAULT_ORDER_BOUND = 10_000


class GroupError(ValueError):
    """Raised when generators do not close into a finite group."""


class RegionError(ValueError):
    """Raised when the D region cannot be written as a root half-space cone."""


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Root:
    """A unit normal to a reflecting hyperplane."""

    vec: np.ndarray

    def __post_init__(self):
        v = _readonly(self.vec)
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValueError(f"root must be a unit vector, got |r| = {float(np.linalg.norm(v)):.6g}")
        object.__setattr__(self, "vec", v)

    @property
    def dim(self) -> int:
        return self.vec.shape[0]


def reflect(r: Root, u) -> np.ndarray:
    """Reflect u across the hyperplane orthogonal to r: u - 2<u,r>r."""
    rv = r.vec if isinstance(r, Root) else Root(np.asarray(r, float)).vec
    u = np.asarray(u, dtype=float)
    return u - 2.0 * (u @ rv)[..., None] * rv if u.ndim > 1 else u - 2.0 * (u @ rv) * rv


def reflection_matrix(r: Root) -> np.ndarray:
    rv = r.vec
    return np.eye(rv.shape[0]) - 2.0 * np.outer(rv, rv)


def _dedup_key(mat: np.ndarray) -> bytes:
    # +0.0 collapses -0.0 and 0.0 to one byte pattern
    return (np.round(mat, DEDUP_DECIMALS) + 0.0).tobytes()


def _generic_t(fund_matrix: np.ndarray) -> np.ndarray:
    """Deterministic vector interior to the fundamental cone.

    Coefficients (1, pi^-1, pi^-2, ...) over the dual basis of the walls,
    so <t, r_j> = pi^-(j-1) > 0 exactly for every fundamental root r_j.
    Powers of pi keep every other root off the t-hyperplane, and t inside
    the cone guarantees each wall of any union of chamber copies shows up
    on the positive side of the split.
    """
    coeffs = np.array([math.pi ** (-k) for k in range(fund_matrix.shape[0])])
    return np.linalg.pinv(fund_matrix) @ coeffs


@dataclass(frozen=True)
class ReflectionGroup:
    """A finite group generated by reflections, enumerated explicitly."""

    dim: int
    fundamental_roots: tuple[Root, ...]
    elements: np.ndarray  # shape (order, dim, dim)
    t: np.ndarray  # generic vector splitting the root set into +/- halves

    def __post_init__(self):
        object.__setattr__(self, "elements", _readonly(self.elements))
        object.__setattr__(self, "t", _readonly(self.t))

    @property
    def order(self) -> int:
        return self.elements.shape[0]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """All group images of the given points, shape (order, ..., dim)."""
        return np.einsum("gij,...j->g...i", self.elements, np.asarray(points, float))


def generate_group(fundamental_roots, order_bound: int = DEFAULT_ORDER_BOUND) -> ReflectionGroup:
    """Close the fundamental reflections under composition.

    Breadth-first products with entry-rounding deduplication.  Raises
    GroupError when the closure exceeds order_bound, which is the practical
    signal that the given roots do not generate a finite group.
    """
    roots = tuple(r if isinstance(r, Root) else Root(np.asarray(r, float)) for r in fundamental_roots)
    if not roots:
        raise ValueError("need at least one fundamental root")
    dim = roots[0].dim
    if any(r.dim != dim for r in roots):
        raise ValueError("fundamental roots live in different dimensions")
    mat = np.array([r.vec for r in roots])
    if np.linalg.matrix_rank(mat, tol=1e-10) != len(roots):
        raise ValueError("fundamental roots must be linearly independent")
    gram = mat @ mat.T
    off = gram - np.diag(np.diag(gram))
    if off.max() > UNIT_TOL:
        raise ValueError("fundamental roots must satisfy <r_i, r_j> <= 0 for i != j")

    gens = [reflection_matrix(r) for r in roots]
    ident = np.eye(dim)
    seen = {_dedup_key(ident): ident}
    frontier = [ident]
    while frontier:
        new = []
        for g in frontier:
            for s in gens:
                prod = s @ g
                key = _dedup_key(prod)
                if key not in seen:
                    seen[key] = prod
                    new.append(prod)
        frontier = new
        if len(seen) > order_bound:
            raise GroupError(
                f"closure exceeded {order_bound} elements; not a finite reflection group "
                "(or raise order_bound)"
            )
    elements = np.array(sorted(seen.values(), key=_dedup_key))
    return ReflectionGroup(dim=dim, fundamental_roots=roots, elements=elements, t=_generic_t(mat))


def positive_roots(group: ReflectionGroup) -> np.ndarray:
    """All roots r with <t, r> > 0, one per reflecting hyperplane."""
    imgs = np.einsum("gij,rj->gri", group.elements, np.array([r.vec for r in group.fundamental_roots]))
    flat = imgs.reshape(-1, group.dim)
    dots = flat @ group.t
    if np.abs(dots).min() <= 1e-12:
        raise GroupError("splitting vector t lies on a root hyperplane; root set cannot be oriented")
    signs = np.where(dots > 0.0, 1.0, -1.0)
    flat = flat * signs[:, None]
    out, keys = [], set()
    for v in flat:
        k = _dedup_key(v)
        if k not in keys:
            keys.add(k)
            out.append(v)
    return np.array(out)


def all_roots(group: ReflectionGroup) -> np.ndarray:
    pos = positive_roots(group)
    return np.vstack([pos, -pos])


@dataclass(frozen=True)
class Cone:
    """Intersection of root half-spaces {<u, r> >= 0}; label 'F' or 'D'.

    An empty wall tuple means the whole space (this happens for D when a1
    is the origin and the stabilizer is the full group).  Cones built by
    region_D remember the group and the anchor point a1 so downstream code
    can extend functions defined on the cone equivariantly.
    """

    walls: tuple[Root, ...]
    label: str = "F"
    group: ReflectionGroup | None = field(default=None, repr=False, compare=False)
    anchor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int | None:
        return self.walls[0].dim if self.walls else None

    def wall_matrix(self) -> np.ndarray:
        if not self.walls:
            raise ValueError("cone has no walls")
        return np.array([w.vec for w in self.walls])

    def contains(self, points, tol: float = MEMBERSHIP_TOL):
        """Membership test, vectorized over the leading axis."""
        points = np.asarray(points, dtype=float)
        if not self.walls:
            return np.ones(points.shape[:-1], dtype=bool) if points.ndim > 1 else True
        dots = points @ self.wall_matrix().T
        ok = (dots >= -tol).all(axis=-1)
        return ok if points.ndim > 1 else bool(ok)


def fundamental_cone(group: ReflectionGroup) -> Cone:
    return Cone(walls=group.fundamental_roots, label="F")


@dataclass(frozen=True)
class OrbitData:
    """Orbit of the base minimum a1 and its stabilizer bookkeeping."""

    a1: np.ndarray
    stabilizer_order: int
    orbit: np.ndarray  # shape (N, dim)
    N: int
    stabilizer: np.ndarray = field(repr=False, default=None)  # shape (stab_order, dim, dim)

    def __post_init__(self):
        object.__setattr__(self, "a1", _readonly(self.a1))
        object.__setattr__(self, "orbit", _readonly(self.orbit))
        if self.stabilizer is not None:
            object.__setattr__(self, "stabilizer", _readonly(self.stabilizer))


def orbit_and_stabilizer(group: ReflectionGroup, a1) -> OrbitData:
    """Orbit {g a1} and Stab(a1); requires a1 in the closed fundamental cone."""
    a1 = np.asarray(a1, dtype=float)
    if not fundamental_cone(group).contains(a1):
        raise ValueError("a1 must lie in the closed fundamental cone")
    images = group.apply(a1)
    fixed = np.abs(images - a1).max(axis=1) <= MEMBERSHIP_TOL
    stab_order = int(fixed.sum())
    if group.order % stab_order != 0:
        raise GroupError("stabilizer order does not divide the group order; dedup tolerance too coarse")
    orbit, keys = [], set()
    for v in images:
        k = _dedup_key(v)
        if k not in keys:
            keys.add(k)
            orbit.append(v)
    orbit = np.array(orbit)
    n_cosets = group.order // stab_order
    if len(orbit) != n_cosets:
        raise GroupError("orbit size disagrees with |G|/|Stab|; dedup tolerance too coarse")
    return OrbitData(
        a1=a1,
        stabilizer_order=stab_order,
        orbit=orbit,
        N=n_cosets,
        stabilizer=group.elements[fixed],
    )


def _edge_generators(group: ReflectionGroup) -> np.ndarray:
    """Columns span the extreme rays of F-bar (dual basis to the walls)."""
    rmat = np.array([r.vec for r in group.fundamental_roots])
    return np.linalg.inv(rmat)


def _unit_rows(x: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    keep = norms > floor
    return x[keep] / norms[keep, None]


def region_D(group: ReflectionGroup, a1, n_samples: int = 1000) -> Cone:
    """Walls of D-bar = union of stabilizer copies of F-bar.

    Candidate walls are the positive roots whose half-space contains the
    union (tested on quasi-random interior samples of every copy).  A kept
    candidate is a wall only if exact face samples lying on its hyperplane
    span a full facet (rank dim-1); roots touching the union along a lower
    dimensional edge would silently understate wall distances.  A final
    cross-check confirms on sphere samples that the half-space cone and the
    union agree, erroring out otherwise.
    """
    od = orbit_and_stabilizer(group, a1)
    if od.stabilizer_order == 1:
        return Cone(walls=group.fundamental_roots, label="D", group=group, anchor=od.a1)
    if od.stabilizer_order == group.order:
        return Cone(walls=(), label="D", group=group, anchor=od.a1)

    dim = group.dim
    edges = _edge_generators(group)  # columns are the extreme rays
    halton = qmc.Halton(d=dim, scramble=False, seed=0)
    lam = halton.random(n_samples) + 1e-3
    interior = lam @ edges.T  # rows are points of F interior
    stab = od.stabilizer
    member_pts = _unit_rows(np.einsum("gij,sj->gsi", stab, interior).reshape(-1, dim))

    face_pts = []
    lam_face = qmc.Halton(d=dim, scramble=False, seed=1).random(64) + 1e-3
    for i in range(dim):
        lf = lam_face.copy()
        lf[:, i] = 0.0
        face_pts.append(np.einsum("gij,sj->gsi", stab, lf @ edges.T).reshape(-1, dim))
    face_pts = _unit_rows(np.vstack(face_pts))

    cand = positive_roots(group)
    walls = []
    tol = 1e-9
    for r in cand:
        if (member_pts @ r).min() < -tol:
            continue
        if (face_pts @ r).min() < -tol:
            continue
        on_plane = face_pts[np.abs(face_pts @ r) <= tol]
        if on_plane.shape[0] == 0:
            continue
        rank = int((np.linalg.svd(on_plane, compute_uv=False) > 1e-8).sum())
        if rank == dim - 1:
            walls.append(Root(r))
    cone = Cone(walls=tuple(walls), label="D", group=group, anchor=od.a1)

    # cross-check: the wall cone must reproduce the union on sphere samples
    rng = np.random.default_rng(0)
    sphere = _unit_rows(rng.standard_normal((4096, dim)))
    probe = np.vstack([sphere, member_pts, face_pts])
    in_cone = cone.contains(probe, tol=tol)
    fund = np.array([r.vec for r in group.fundamental_roots])
    back = np.einsum("gji,sj->gsi", stab, probe)  # g^T x for each stabilizer element
    in_union = ((back @ fund.T) >= -tol).all(axis=2).any(axis=0)
    if not walls or (in_cone != in_union).any():
        raise RegionError(
            "the union of stabilizer copies of F-bar is not an intersection of root "
            "half-spaces for this placement of a1"
        )
    return cone


def wall_distance(cone: Cone, x) -> tuple[float, bool]:
    """Distance from x to the cone boundary: min over walls of <x, r>.

    Returns (distance, inside).  Outside points report (0.0, False); a cone
    with no walls is the whole space, reported as (inf, True).
    """
    x = np.asarray(x, dtype=float)
    if not cone.walls:
        return math.inf, True
    dots = x @ cone.wall_matrix().T
    d = float(dots.min())
    if d < -MEMBERSHIP_TOL:
        return 0.0, False
    return max(d, 0.0), True


def wall_distances(cone: Cone, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized wall_distance over rows of points."""
    points = np.asarray(points, dtype=float)
    if not cone.walls:
        return np.full(points.shape[0], math.inf), np.ones(points.shape[0], dtype=bool)
    dots = points @ cone.wall_matrix().T
    d = dots.min(axis=1)
    inside = d >= -MEMBERSHIP_TOL
    return np.where(inside, np.maximum(d, 0.0), 0.0), inside


@dataclass(frozen=True)
class PositivityReport:
    """Worst inner product <u(x), r> over the half-space <x, r> >= 0, per root."""

    roots: np.ndarray  # (k, dim)
    margins: np.ndarray  # (k,)
    tol: float

    @property
    def worst(self) -> float:
        return float(self.margins.min()) if self.margins.size else 0.0

    @property
    def passed(self) -> bool:
        return self.worst >= -self.tol


def positivity_by_roots(positions, values, roots, tol: float = 1e-8) -> PositivityReport:
    """Positive-map check: on each root's nonnegative side, u stays on that side.

    positions and values are matching (m, dim) arrays; roots is (k, dim) or a
    sequence of Root.  Half-spaces with no sample points report margin 0.
    """
    positions = np.asarray(positions, dtype=float)
    values = np.asarray(values, dtype=float)
    if isinstance(roots, ReflectionGroup):
        roots = positive_roots(roots)
    rmat = np.array([r.vec if isinstance(r, Root) else np.asarray(r, float) for r in roots])
    margins = np.empty(len(rmat))
    for i, r in enumerate(rmat):
        side = positions @ r >= 0.0
        margins[i] = (values[side] @ r).min() if side.any() else 0.0
    return PositivityReport(roots=rmat, margins=margins, tol=tol)


def builtin_group(key: str, order_bound: int = DEFAULT_ORDER_BOUND) -> ReflectionGroup:
    """Named groups: 'Z2-line', 'dihedral-k' (k>=2), 'A3-tetrahedral', 'B3-cube'."""
    if key == "Z2-line":
        roots = [np.array([1.0])]
    elif key.startswith("dihedral-"):
        k = int(key.split("-", 1)[1])
        if k < 2:
            raise ValueError("dihedral-k needs k >= 2")
        roots = [
            np.array([0.0, 1.0]),
            np.array([math.sin(math.pi / k), -math.cos(math.pi / k)]),
        ]
    elif key == "A3-tetrahedral":
        roots = [
            np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]),
            np.array([-0.5, -0.5, 1.0 / math.sqrt(2.0)]),
        ]
    elif key == "B3-cube":
        s = 1.0 / math.sqrt(2.0)
        roots = [
            np.array([1.0, 0.0, 0.0]),
            np.array([-s, s, 0.0]),
            np.array([0.0, -s, s]),
        ]
    else:
        raise KeyError(f"unknown group key {key!r}")
    return generate_group(roots, order_bound=order_bound)
