"""Bounded open domains and boundary functions.

Every domain answers three vectorized queries on arrays of shape ``(n, d)``:
``dist_to_boundary``, ``contains`` and ``nearest_boundary_point``.  Exit
points for the termination rule are chosen by :func:`exit_point`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BOUNDARY_TOL = 1e-12


def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def _lexmin_dir(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = -1.0
    return e


class Domain:
    """Base class: subclasses implement ``_dist`` and ``_nearest`` on (n, d) arrays."""

    dimension: int

    def _dist(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _nearest(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def dist_to_boundary(self, x):
        x, single = _rows(x)
        out = self._dist(x)
        return float(out[0]) if single else out

    def contains(self, x):
        x, single = _rows(x)
        out = self._dist(x) > BOUNDARY_TOL
        return bool(out[0]) if single else out

    def nearest_boundary_point(self, x):
        x, single = _rows(x)
        out = self._nearest(x)
        return out[0] if single else out

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


def _sphere_nearest(x, center, radius):
    """Nearest point on a sphere; at the center the lexicographic minimum is used."""
    rel = x - center
    r = _norm(rel)
    unit = np.where(r[:, None] > 0, rel / np.where(r > 0, r, 1.0)[:, None], _lexmin_dir(x.shape[1]))
    return center + radius * unit


@dataclass(frozen=True)
class Ball(Domain):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def dimension(self):
        return self.center.shape[0]

    def _dist(self, x):
        return self.radius - _norm(x - self.center)

    def _nearest(self, x):
        return _sphere_nearest(x, self.center, self.radius)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def describe(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Annulus(Domain):
    """``{x : inner < |x - center| < outer}``."""

    center: np.ndarray
    inner: float
    outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not 0 < self.inner < self.outer:
            raise ValueError("annulus needs 0 < inner < outer")

    @property
    def dimension(self):
        return self.center.shape[0]

    def _dist(self, x):
        r = _norm(x - self.center)
        return np.minimum(r - self.inner, self.outer - r)

    def _nearest(self, x):
        r = _norm(x - self.center)
        inner = _sphere_nearest(x, self.center, self.inner)
        outer = _sphere_nearest(x, self.center, self.outer)
        di, do = np.abs(r - self.inner), np.abs(self.outer - r)
        pick_inner = (di < do) | ((di == do) & _lex_less(inner, outer))
        return np.where(pick_inner[:, None], inner, outer)

    def on_inner(self, y, tol=1e-9):
        y, _ = _rows(y)
        return np.abs(_norm(y - self.center) - self.inner) <= tol

    def bounding_box(self):
        return self.center - self.outer, self.center + self.outer

    def describe(self):
        return {"kind": "annulus", "center": self.center.tolist(), "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class PuncturedBall(Domain):
    """Ball minus a closed core ball of radius ``core`` (``core = 0`` removes only the center)."""

    center: np.ndarray
    radius: float
    core: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def dimension(self):
        return self.center.shape[0]

    def _dist(self, x):
        r = _norm(x - self.center)
        return np.minimum(r - self.core, self.radius - r)

    def _nearest(self, x):
        r = _norm(x - self.center)
        outer = _sphere_nearest(x, self.center, self.radius)
        if self.core > 0:
            inner = _sphere_nearest(x, self.center, self.core)
        else:
            inner = np.broadcast_to(self.center, x.shape)
        di, do = r - self.core, self.radius - r
        pick_inner = (di < do) | ((di == do) & _lex_less(inner, outer))
        return np.where(pick_inner[:, None], inner, outer)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def describe(self):
        return {"kind": "punctured_ball", "center": self.center.tolist(), "radius": self.radius, "core": self.core}


@dataclass(frozen=True)
class Box(Domain):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @property
    def dimension(self):
        return self.lo.shape[0]

    def _dist(self, x):
        return np.minimum(np.min(x - self.lo, axis=1), np.min(self.hi - x, axis=1))

    def _nearest(self, x):
        # the face attaining the minimum; ties go to the lexicographically smaller point
        n, d = x.shape
        gaps = np.concatenate([x - self.lo, self.hi - x], axis=1)
        best = gaps.min(axis=1)
        out = np.empty_like(x)
        chosen = np.zeros(n, dtype=bool)
        cand_best = None
        for j in range(2 * d):
            axis = j % d
            cand = x.copy()
            cand[:, axis] = self.lo[axis] if j < d else self.hi[axis]
            hit = gaps[:, j] == best
            if cand_best is None:
                cand_best = np.where(hit[:, None], cand, np.inf)
            else:
                better = hit & _lex_less(cand, cand_best)
                cand_best = np.where(better[:, None], cand, cand_best)
            chosen |= hit
        out[:] = cand_best
        return out

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def describe(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class ConeComplement(Domain):
    """Ball minus a closed infinite cone of half-angle ``angle`` whose tip lies on the sphere.

    ``tip_direction`` is the unit vector from the center to the tip; the cone
    axis points from the tip back toward the center.
    """

    center: np.ndarray
    radius: float
    tip_direction: np.ndarray
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        t = np.asarray(self.tip_direction, dtype=float)
        object.__setattr__(self, "tip_direction", t / np.linalg.norm(t))
        if not 0 < self.angle < math.pi / 2:
            raise ValueError("cone half-angle must lie in (0, pi/2)")

    @property
    def dimension(self):
        return self.center.shape[0]

    @property
    def tip(self):
        return self.center + self.radius * self.tip_direction

    def _cone_geometry(self, x):
        axis = -self.tip_direction
        a = x - self.tip
        t = a @ axis
        perp = a - t[:, None] * axis
        rho = _norm(perp)
        ra = _norm(a)
        theta = np.arctan2(rho, t)
        return axis, a, t, perp, rho, ra, theta

    def _cone_dist(self, x):
        _, _, _, _, _, ra, theta = self._cone_geometry(x)
        phi = self.angle
        return np.where(theta <= phi, 0.0, np.where(theta >= phi + math.pi / 2, ra, ra * np.sin(theta - phi)))

    def _dist(self, x):
        sphere = self.radius - _norm(x - self.center)
        return np.minimum(sphere, self._cone_dist(x))

    def _cone_nearest(self, x):
        axis, a, t, perp, rho, ra, theta = self._cone_geometry(x)
        phi = self.angle
        # unit generator of the cone in the plane of (axis, a)
        pu = np.where(rho[:, None] > 0, perp / np.where(rho > 0, rho, 1.0)[:, None], _any_orthogonal(axis))
        gen = math.cos(phi) * axis + math.sin(phi) * pu
        proj = np.maximum(np.einsum("ij,ij->i", a, gen), 0.0)
        on_surface = self.tip + proj[:, None] * gen
        return np.where((theta >= phi + math.pi / 2)[:, None], self.tip, on_surface)

    def _nearest(self, x):
        sphere_pt = _sphere_nearest(x, self.center, self.radius)
        cone_pt = self._cone_nearest(x)
        ds = self.radius - _norm(x - self.center)
        dc = self._cone_dist(x)
        pick_cone = (dc < ds) | ((dc == ds) & _lex_less(cone_pt, sphere_pt))
        return np.where(pick_cone[:, None], cone_pt, sphere_pt)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def describe(self):
        return {
            "kind": "cone_complement",
            "center": self.center.tolist(),
            "radius": self.radius,
            "tip_direction": self.tip_direction.tolist(),
            "angle": self.angle,
        }


def _any_orthogonal(axis):
    e = np.zeros_like(axis)
    e[np.argmin(np.abs(axis))] = 1.0
    e = e - (e @ axis) * axis
    return e / np.linalg.norm(e)


@dataclass(frozen=True)
class Polygon(Domain):
    """Simple polygon in the plane; vertices in order (either orientation)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least three 2-d vertices")
        object.__setattr__(self, "vertices", v)

    dimension = 2

    def _edges(self):
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        return a, b

    def _edge_projections(self, x):
        a, b = self._edges()
        ab = b - a
        t = np.einsum("nkj,kj->nk", x[:, None, :] - a[None], ab) / np.einsum("kj,kj->k", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        pts = a[None] + t[..., None] * ab[None]
        dist = np.linalg.norm(x[:, None, :] - pts, axis=2)
        return pts, dist

    def _inside(self, x):
        a, b = self._edges()
        xs, ys = x[:, 0:1], x[:, 1:2]
        cond = (a[None, :, 1] > ys) != (b[None, :, 1] > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[None, :, 0] + (ys - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (
                b[None, :, 1] - a[None, :, 1]
            )
        crossings = np.sum(cond & (xs < xint), axis=1)
        return crossings % 2 == 1

    def _dist(self, x):
        _, dist = self._edge_projections(x)
        d = dist.min(axis=1)
        return np.where(self._inside(x), d, -d)

    def _nearest(self, x):
        pts, dist = self._edge_projections(x)
        best = dist.min(axis=1, keepdims=True)
        # lexicographic tie-break among equally near edge projections
        cand = np.where((dist == best)[..., None], pts, np.inf)
        order = np.lexsort((cand[..., 1], cand[..., 0]), axis=1)[:, 0]
        return cand[np.arange(x.shape[0]), order]

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def describe(self):
        return {"kind": "polygon", "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class Intersection(Domain):
    """``A ∩ B``; distance is the minimum of the two distances."""

    first: Domain
    second: Domain

    @property
    def dimension(self):
        return self.first.dimension

    def _dist(self, x):
        return np.minimum(self.first._dist(x), self.second._dist(x))

    def _nearest(self, x):
        d1, d2 = self.first._dist(x), self.second._dist(x)
        p1, p2 = self.first._nearest(x), self.second._nearest(x)
        return np.where((d1 <= d2)[:, None], p1, p2)

    def bounding_box(self):
        lo1, hi1 = self.first.bounding_box()
        lo2, hi2 = self.second.bounding_box()
        return np.maximum(lo1, lo2), np.minimum(hi1, hi2)

    def describe(self):
        return {"kind": "intersection", "first": self.first.describe(), "second": self.second.describe()}


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise strict lexicographic comparison ``a < b``."""
    less = np.zeros(a.shape[0], dtype=bool)
    decided = np.zeros(a.shape[0], dtype=bool)
    for j in range(a.shape[1]):
        lt = (a[:, j] < b[:, j]) & ~decided
        gt = (a[:, j] > b[:, j]) & ~decided
        less |= lt
        decided |= lt | gt
    return less


def direction_set(d: int, count: int | None = None) -> np.ndarray:
    """Deterministic, roughly uniform unit directions.

    64 equally spaced angles in the plane, a Fibonacci sphere of 256 points
    in 3-d, and a fixed-seed Gaussian sample in higher dimension.
    """
    if d == 2:
        count = count or 64
        th = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    count = count or 256
    if d == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        r = np.sqrt(1 - z * z)
        th = np.pi * (1 + 5**0.5) * i
        return np.column_stack([z, r * np.cos(th), r * np.sin(th)])
    g = np.random.default_rng(12345).standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sphere_ray(x: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float, outward: bool) -> np.ndarray:
    """Smallest ``s > 0`` with ``|x + s u - center| = radius`` (inf if none), shape (n, m).

    ``outward`` picks the exit root (from inside the sphere); otherwise the
    entry root (from outside).
    """
    rel = x - center
    b = rel @ dirs.T
    c = np.einsum("ij,ij->i", rel, rel)[:, None] - radius**2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    s = -b + root if outward else -b - root
    return np.where((disc >= 0) & (s >= 0), s, np.inf)


def ray_exits(domain: Domain, x: np.ndarray, dirs: np.ndarray, budget, iters: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """First boundary crossing along rays ``x_i + s u_j``.

    Exact for balls and spherical shells, sphere tracing otherwise.  Returns
    points ``(n, m, d)`` and a mask ``(n, m)`` of rays that meet the boundary
    within ``budget``.
    """
    n, d = x.shape
    m = dirs.shape[0]
    budget = np.broadcast_to(np.asarray(budget, dtype=float), (n,))
    cap = budget[:, None] + 1e-12
    if isinstance(domain, Ball):
        s = _sphere_ray(x, dirs, domain.center, domain.radius, True)
    elif isinstance(domain, (Annulus, PuncturedBall)):
        inner = domain.inner if isinstance(domain, Annulus) else domain.core
        outer = domain.outer if isinstance(domain, Annulus) else domain.radius
        s = _sphere_ray(x, dirs, domain.center, outer, True)
        if inner > 0:
            s = np.minimum(s, _sphere_ray(x, dirs, domain.center, inner, False))
    else:
        sf = np.zeros(n * m)
        base = np.repeat(x, m, axis=0)
        flat_dirs = np.tile(dirs, (n, 1))
        capf = np.repeat(budget, m) + 1e-12
        active = np.arange(n * m)
        for _ in range(iters):
            dist = domain._dist(base[active] + sf[active, None] * flat_dirs[active])
            step = np.maximum(dist, 0.0)
            sf[active] += step
            active = active[(step >= 1e-13) & (sf[active] <= capf[active])]
            if active.size == 0:
                break
        pts = base + sf[:, None] * flat_dirs
        final = domain._dist(pts)
        ok = (np.abs(final) <= 1e-9) & (sf <= capf)
        return pts.reshape(n, m, d), ok.reshape(n, m)
    ok = s <= cap
    s_fin = np.where(np.isfinite(s), s, 0.0)
    pts = x[:, None, :] + s_fin[:, :, None] * dirs[None, :, :]
    return pts, ok


def exit_point(domain: Domain, x, budget, preference=None, n_dir: int | None = None):
    """Boundary point within ``budget`` of ``x`` chosen by the terminating player.

    Without a preference the nearest boundary point is returned.  With a
    preference (a vector, or a vectorized callable scoring points) the
    maximizer over a candidate set is returned: the nearest point plus the
    first boundary hits of ``n_dir`` rays from ``x``.

    Raises ``ValueError`` when ``dist(x, boundary) > budget``.
    """
    xs, single = _rows(x)
    budget_arr = np.broadcast_to(np.asarray(budget, dtype=float), (xs.shape[0],))
    dist = domain._dist(xs)
    if np.any(dist > budget_arr + 1e-12):
        raise ValueError("exit_point called with dist(x, boundary) > budget")
    nearest = domain._nearest(xs)
    if preference is None:
        return nearest[0] if single else nearest
    dirs = direction_set(domain.dimension, n_dir)
    rays, ok = ray_exits(domain, xs, dirs, budget_arr)
    cands = np.concatenate([nearest[:, None, :], rays], axis=1)
    valid = np.concatenate([np.ones((xs.shape[0], 1), dtype=bool), ok], axis=1)
    n, m, d = cands.shape
    if callable(preference):
        score = np.asarray(preference(cands.reshape(n * m, d)), dtype=float).reshape(n, m)
    else:
        score = cands @ np.asarray(preference, dtype=float)
    score = np.where(valid, score, -np.inf)
    best = np.argmax(score, axis=1)
    out = cands[np.arange(n), best]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# boundary functions


@dataclass(frozen=True)
class BoundaryFunction:
    """Vectorized payoff on the boundary: ``fn`` maps (n, d) points to (n,) values."""

    fn: Callable[[np.ndarray], np.ndarray]
    descriptor: dict = field(default_factory=dict)
    bounds: tuple[float, float] | None = None

    def __call__(self, y):
        y, single = _rows(y)
        out = np.asarray(self.fn(y), dtype=float)
        return float(out[0]) if single else out

    def value_range(self, domain: Domain | None = None, samples: int = 4096) -> tuple[float, float]:
        if self.bounds is not None:
            return self.bounds
        if domain is None:
            raise ValueError("value range unknown; pass a domain to sample")
        rng = np.random.default_rng(0)
        lo, hi = domain.bounding_box()
        pts = domain.nearest_boundary_point(rng.uniform(lo, hi, size=(samples, domain.dimension)))
        vals = self(pts)
        return float(vals.min()), float(vals.max())


def constant_function(c: float) -> BoundaryFunction:
    return BoundaryFunction(lambda y: np.full(y.shape[0], float(c)), {"kind": "constant", "value": c}, (c, c))


def linear_function(coef, offset: float = 0.0) -> BoundaryFunction:
    coef = np.asarray(coef, dtype=float)
    return BoundaryFunction(lambda y: y @ coef + offset, {"kind": "linear", "coef": coef.tolist(), "offset": offset})


def from_callable(u: Callable, name: str = "custom", bounds=None) -> BoundaryFunction:
    return BoundaryFunction(lambda y: u(y), {"kind": name}, bounds)


def indicator_function(predicate: Callable[[np.ndarray], np.ndarray], name: str = "indicator") -> BoundaryFunction:
    return BoundaryFunction(
        lambda y: np.asarray(predicate(y), dtype=float), {"kind": name}, (0.0, 1.0)
    )
