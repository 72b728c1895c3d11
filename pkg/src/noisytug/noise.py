"""Noise measures for tug of war with noise.

A noise measure is a mean-zero, compactly supported probability law on R^d
that is invariant under orthogonal maps fixing ``e1``.  When a player moves
by ``v`` the engine adds a noise vector drawn from the push-forward ``mu_v``
of the measure under ``Psi``, where ``Psi = |v| * (orthogonal map)`` and
``Psi e1 = v``.

Three kinds are supported:

* ``"point"``   -- point mass at the origin (tug of war without noise);
* ``"atoms"``   -- finitely many weighted atoms;
* ``"sphere"``  -- uniform law on the radius-``r`` sphere of the hyperplane
  orthogonal to ``e1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TOL = 1e-12

RANDOM = "random"
ALTERNATING = "alternating"
TURN_MODES = (RANDOM, ALTERNATING)


class NoiseMeasureError(ValueError):
    """Raised when a noise measure violates one of its invariants."""


@dataclass(frozen=True)
class NoiseMeasure:
    dimension: int
    kind: str
    atoms: np.ndarray | None = None
    weights: np.ndarray | None = None
    radius: float = 0.0
    support_radius: float = field(init=False)
    covariance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.dimension
        if self.kind == "point":
            support, cov = 0.0, np.zeros((d, d))
        elif self.kind == "atoms":
            support = float(np.max(np.linalg.norm(self.atoms, axis=1)))
            cov = (self.atoms * self.weights[:, None]).T @ self.atoms
        elif self.kind == "sphere":
            support = float(self.radius)
            cov = np.diag([0.0] + [self.radius**2 / (d - 1)] * (d - 1))
        else:
            raise NoiseMeasureError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "support_radius", support)
        object.__setattr__(self, "covariance", cov)

    @property
    def alpha(self) -> float:
        return 1.0 + self.support_radius

    @property
    def is_atomic(self) -> bool:
        """True when the measure has finitely many atoms (as used by the DPP oracle)."""
        return self.kind in ("point", "atoms") or (self.kind == "sphere" and self.dimension == 2)

    def atom_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(points, weights)`` of an atomic measure."""
        d = self.dimension
        if self.kind == "point":
            return np.zeros((1, d)), np.ones(1)
        if self.kind == "atoms":
            return self.atoms.copy(), self.weights.copy()
        if self.kind == "sphere" and d == 2:
            pts = np.array([[0.0, self.radius], [0.0, -self.radius]])
            return pts, np.array([0.5, 0.5])
        raise NoiseMeasureError("oracle requires atomic noise")

    def describe(self) -> dict:
        out = {"kind": self.kind, "dimension": self.dimension}
        if self.kind == "atoms":
            out["atoms"] = self.atoms.tolist()
            out["weights"] = self.weights.tolist()
        elif self.kind == "sphere":
            out["radius"] = self.radius
        return out


@dataclass(frozen=True)
class GameConstants:
    """Constants derived from a noise covariance.

    ``p`` and ``q`` may be ``math.inf``.  ``turn_mode`` records which of the
    two formulas (random-turn or alternating-turn) produced them.
    """

    p: float
    q: float
    beta: float
    alpha: float
    turn_mode: str = RANDOM

    @property
    def p_inv(self) -> float:
        return 0.0 if math.isinf(self.p) else 1.0 / self.p

    @property
    def q_inv(self) -> float:
        return 0.0 if math.isinf(self.q) else 1.0 / self.q

    def require_finite_p(self):
        if not (1.0 < self.p < math.inf):
            raise ValueError(f"p must lie in (1, inf) for p-harmonic checks, got p={self.p}")


def _conjugate(p: float) -> float:
    if math.isinf(p):
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def point_mass(d: int) -> NoiseMeasure:
    return make_noise_measure("point", d)


def uniform_sphere_orthogonal(d: int, r: float) -> NoiseMeasure:
    return make_noise_measure("sphere", d, radius=r)


def discrete_atoms(points, weights) -> NoiseMeasure:
    points = np.asarray(points, dtype=float)
    return make_noise_measure("atoms", points.shape[1], atoms=points, weights=weights)


def two_point(d: int = 2, r: float = 1.0) -> NoiseMeasure:
    """Atoms ``+-r e2`` with weight 1/2 each (the measure drawn in the game's move figure)."""
    pts = np.zeros((2, d))
    pts[0, 1], pts[1, 1] = r, -r
    return discrete_atoms(pts, [0.5, 0.5])


def sphere_radius_for(p: float, d: int) -> float:
    """Radius ``sqrt((d-1) q / p)`` giving ``p(mu) = p`` in random-turn mode."""
    if not (1.0 < p < math.inf):
        raise ValueError("target p must lie in (1, inf)")
    return math.sqrt((d - 1) * _conjugate(p) / p)


def measure_for_p(p: float, d: int = 2, turn_mode: str = RANDOM) -> NoiseMeasure:
    """A convenient measure with ``derive_constants(...).p == p`` for the given mode.

    Random mode uses the orthogonal sphere.  Alternating mode needs variance
    along ``e1`` as well, so atoms ``+-a e1`` (total weight ``w1``) are mixed
    with ``+-e_i`` for ``i >= 2``.
    """
    if turn_mode == RANDOM:
        return uniform_sphere_orthogonal(d, sphere_radius_for(p, d))
    if turn_mode != ALTERNATING:
        raise ValueError(f"unknown turn mode {turn_mode!r}")
    if not (1.0 < p < math.inf):
        raise ValueError("target p must lie in (1, inf)")
    # C11 = (p - 1) C22; put weight 1/2 on +-a e1 and split 1/2 over +-e_i.
    c22 = 0.5 / (d - 1)
    a = math.sqrt(2.0 * (p - 1.0) * c22)
    pts, wts = [], []
    for sgn in (1.0, -1.0):
        e = np.zeros(d)
        e[0] = sgn * a
        pts.append(e)
        wts.append(0.25)
    for i in range(1, d):
        for sgn in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = sgn
            pts.append(e)
            wts.append(0.25 / (d - 1))
    return discrete_atoms(np.array(pts), wts)


def make_noise_measure(kind: str, d: int, **params) -> NoiseMeasure:
    """Build and validate a noise measure.

    ``kind`` is one of ``"point"``, ``"atoms"`` (params ``atoms``, ``weights``)
    or ``"sphere"`` (param ``radius``).
    """
    if d < 2:
        raise NoiseMeasureError("dimension must be at least 2")
    if kind == "point":
        return NoiseMeasure(d, "point")
    if kind == "sphere":
        r = float(params.get("radius", 1.0))
        if not (r >= 0 and math.isfinite(r)):
            raise NoiseMeasureError("sphere radius must be finite and nonnegative")
        return NoiseMeasure(d, "sphere", radius=r)
    if kind != "atoms":
        raise NoiseMeasureError(f"unknown noise kind {kind!r}")

    atoms = np.atleast_2d(np.asarray(params["atoms"], dtype=float))
    weights = np.asarray(params["weights"], dtype=float).ravel()
    if atoms.shape[0] == 0:
        raise NoiseMeasureError("atom list is empty")
    if atoms.shape[1] != d:
        raise NoiseMeasureError(f"atoms have dimension {atoms.shape[1]}, expected {d}")
    if weights.shape[0] != atoms.shape[0]:
        raise NoiseMeasureError("atoms and weights differ in length")
    if np.any(weights <= 0):
        raise NoiseMeasureError("weights must be positive")
    if not np.all(np.isfinite(atoms)):
        raise NoiseMeasureError("atoms must be finite (compact support)")
    if abs(weights.sum() - 1.0) > TOL:
        raise NoiseMeasureError(f"total weight is {weights.sum()!r}, not 1 (normalization)")
    mean = weights @ atoms
    if np.max(np.abs(mean)) > TOL:
        raise NoiseMeasureError(f"mean is {mean.tolist()}, not zero")
    _check_axial_symmetry(atoms, weights)
    return NoiseMeasure(d, "atoms", atoms=atoms, weights=weights)


def _check_axial_symmetry(atoms: np.ndarray, weights: np.ndarray):
    d = atoms.shape[1]
    cov = (atoms * weights[:, None]).T @ atoms
    off = cov - np.diag(np.diag(cov))
    if np.max(np.abs(off)) > TOL:
        raise NoiseMeasureError("axial symmetry violated: covariance is not diagonal")
    if d > 2 and np.ptp(np.diag(cov)[1:]) > TOL:
        raise NoiseMeasureError("axial symmetry violated: C[i][i] differ for i >= 2")
    # the weighted atom multiset must be invariant under sign flips of coordinates 2..d
    key = _atom_multiset(atoms, weights)
    for i in range(1, d):
        flipped = atoms.copy()
        flipped[:, i] *= -1.0
        if _atom_multiset(flipped, weights) != key:
            raise NoiseMeasureError(
                f"axial symmetry violated: atoms not invariant under flipping coordinate {i + 1}"
            )


def _atom_multiset(atoms, weights):
    acc: dict[tuple, float] = {}
    for a, w in zip(np.round(atoms, 10) + 0.0, weights):
        k = tuple(a.tolist())
        acc[k] = acc.get(k, 0.0) + w
    return sorted((k, round(w, 10)) for k, w in acc.items())


def derive_constants(mu: NoiseMeasure, turn_mode: str = RANDOM) -> GameConstants:
    """Game constants ``p, q, beta, alpha`` of ``mu``.

    Random turns:      p = (C11 + C22 + 1) / C22,  C11 + 1 = beta/q,  C22 = beta/p.
    Alternating turns: p = (C11 + C22) / C22,      C11 = beta/q,      C22 = beta/p.
    ``p`` is infinite exactly when ``C22 == 0``.
    """
    if turn_mode not in TURN_MODES:
        raise ValueError(f"unknown turn mode {turn_mode!r}")
    c11 = float(mu.covariance[0, 0])
    c22 = float(mu.covariance[1, 1])
    parallel = c11 + 1.0 if turn_mode == RANDOM else c11
    if c22 == 0.0:
        p, beta = math.inf, parallel
    else:
        p = (parallel + c22) / c22
        beta = p * c22
    return GameConstants(p=p, q=_conjugate(p), beta=beta, alpha=mu.alpha, turn_mode=turn_mode)


@dataclass(frozen=True)
class RotationScale:
    matrix: np.ndarray
    v: np.ndarray


def _householder_apply(u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Apply ``H S`` row-wise: ``S`` flips the last coordinate, ``H`` reflects e1 onto ``u``.

    ``u`` (n, d) unit vectors, ``y`` (n, d) or (m, d) broadcastable.  Rows with
    ``u == e1`` get the identity.
    """
    d = u.shape[-1]
    w = -u.copy()
    w[..., 0] += 1.0
    ww = np.einsum("...i,...i->...", w, w)
    ident = ww < 1e-30
    sy = y.copy()
    sy[..., d - 1] = -sy[..., d - 1]
    sy = np.where(ident[..., None], y, sy)
    coef = np.where(ident, 0.0, 2.0 * np.einsum("...i,...i->...", w, sy) / np.where(ident, 1.0, ww))
    return sy - coef[..., None] * w


def rotation_to(v) -> RotationScale:
    """Scaled rotation ``Psi`` with ``Psi e1 = v``.

    ``Psi = |v| H S`` where ``H`` is the Householder reflection exchanging
    ``e1`` and ``v/|v|`` and ``S`` flips the last coordinate, so ``Psi/|v|``
    is a proper rotation.  ``Psi = |v| I`` when ``v`` is a positive multiple
    of ``e1``.
    """
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("undefined rotation target: v = 0")
    u = v / norm
    d = v.shape[0]
    cols = _householder_apply(np.broadcast_to(u, (d, d)).copy(), np.eye(d))
    mat = norm * cols.T
    mat[:, 0] = v  # exact image of e1
    return RotationScale(matrix=mat, v=v)


def _sample_reference(mu: NoiseMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    d = mu.dimension
    if mu.kind == "point":
        return np.zeros((n, d))
    if mu.kind == "atoms":
        if mu.weights.shape[0] == 1:
            return np.repeat(mu.atoms, n, axis=0)
        idx = np.searchsorted(np.cumsum(mu.weights), rng.random(n) * mu.weights.sum(), side="right")
        return mu.atoms[np.minimum(idx, mu.weights.shape[0] - 1)]
    g = rng.standard_normal((n, d - 1))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    out = np.zeros((n, d))
    out[:, 1:] = mu.radius * g / np.where(nrm > 0, nrm, 1.0)
    return out


def sample_noise_batch(mu: NoiseMeasure, v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One sample of ``mu_{v_i}`` for each row ``v_i`` of ``v`` (shape (n, d)).

    Rows with ``v_i = 0`` give ``z_i = 0``.  The reference sample is drawn for
    every row so the stream consumption does not depend on the moves.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = v.shape[0]
    ref = _sample_reference(mu, n, rng)
    if mu.kind == "point":
        return ref
    norm = np.linalg.norm(v, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    u = v / safe[:, None]
    z = _householder_apply(u, ref) * norm[:, None]
    z[norm == 0] = 0.0
    return z


def sample_noise(mu: NoiseMeasure, v, rng: np.random.Generator) -> np.ndarray:
    """A single draw from ``mu_v``; returns the zero vector when ``v = 0``."""
    return sample_noise_batch(mu, np.asarray(v, dtype=float)[None, :], rng)[0]


def pushforward_covariance(constants: GameConstants, v) -> np.ndarray:
    """Covariance of ``mu_v`` implied by the game constants.

    Random mode: (beta/q - 1) v v^T + (beta/p)(|v|^2 I - v v^T).
    Alternating mode drops the ``-1``.
    """
    v = np.asarray(v, dtype=float)
    vv = np.outer(v, v)
    par = constants.beta * constants.q_inv - (1.0 if constants.turn_mode == RANDOM else 0.0)
    perp = constants.beta * constants.p_inv
    return par * vv + perp * (v @ v * np.eye(v.shape[0]) - vv)


def atom_offsets(mu: NoiseMeasure, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact support of ``mu_v``: returns ``(points, weights)`` of the push-forward."""
    pts, wts = mu.atom_table()
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros((1, mu.dimension)), np.ones(1)
    u = np.broadcast_to(v / norm, pts.shape).copy()
    return _householder_apply(u, pts) * norm, wts
