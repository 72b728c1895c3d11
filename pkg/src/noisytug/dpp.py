"""Grid fixed-point oracle for the value of the fixed-step game.

For atomic noise the one-turn operator

    T u(x) = 1/2 max_{|v| <= eps} E u(x + v + z) + 1/2 min_{|v| <= eps} E u(x + v + z)

is evaluated on a regular grid with multilinear interpolation.  The offsets
``v + z`` do not depend on ``x``, so one sweep is a weighted sum of shifted
copies of the field.  Nodes with ``dist <= alpha * eps`` are absorbing: they
hold ``1/2 max F + 1/2 min F`` over the reachable exit points.  Nodes outside
the domain hold ``F`` at their nearest boundary point; they are only touched
by interpolation stencils straddling the boundary.

Convergence is accelerated by freezing both players' direction choices and
solving the resulting linear system, then re-checking the Bellman residual.
Pure sweeps are used whenever the frozen system misbehaves.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Domain, direction_set, exit_point
from .noise import NoiseMeasure, NoiseMeasureError, atom_offsets

RANDOM_TURN, ALTERNATING_TURN = "random", "alternating"


@dataclass
class ValueField:
    origin: np.ndarray
    spacing: float
    shape: tuple
    values: np.ndarray  # player-I-to-move field for the alternating variant
    interior: np.ndarray
    band: np.ndarray
    eps: float
    variant: str
    residual: float
    converged: bool
    iterations: int
    solves: int
    f_range: tuple
    second: np.ndarray | None = None  # player-II-to-move field (alternating)
    grid_error: float | None = None
    stats: dict = field(default_factory=dict)

    def nodes(self) -> np.ndarray:
        axes = [self.origin[i] + self.spacing * np.arange(n) for i, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def value_at(self, x) -> float | np.ndarray:
        """Multilinear interpolation of the field."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = _interp(self.values.reshape(self.shape), self.origin, self.spacing, x)
        return float(out[0]) if out.shape[0] == 1 else out

    def to_csv(self, path) -> None:
        pts = self.nodes()
        mask = (self.interior | self.band).ravel()
        cols = ["x", "y", "z"][: pts.shape[1]] + ["value"]
        data = np.column_stack([pts[mask], self.values.ravel()[mask]])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.12g")

    def to_binary(self, path) -> None:
        """Raw little-endian float64 grid plus a ``.json`` header beside it."""
        np.asarray(self.values, dtype="<f8").reshape(self.shape).tofile(path)
        header = {
            "origin": self.origin.tolist(),
            "spacing": self.spacing,
            "shape": list(self.shape),
            "dtype": "<f8",
            "order": "C",
            "eps": self.eps,
            "variant": self.variant,
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(header, fh, indent=2)


def _interp(grid: np.ndarray, origin: np.ndarray, h: float, x: np.ndarray) -> np.ndarray:
    d = grid.ndim
    t = (x - origin) / h
    base = np.floor(t).astype(np.int64)
    base = np.clip(base, 0, np.array(grid.shape) - 2)
    frac = t - base
    out = np.zeros(x.shape[0])
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(x.shape[0])
        for i, c in enumerate(corner):
            w *= frac[:, i] if c else 1.0 - frac[:, i]
        out += w * grid[tuple(base[:, i] + corner[i] for i in range(d))]
    return out


class BellmanProblem:
    """Discretized one-turn operator on a grid; see module docstring."""

    def __init__(self, domain: Domain, F, mu: NoiseMeasure, eps: float, variant: str = RANDOM_TURN,
                 h_grid: float | None = None, n_dir: int | None = None, _check_spacing: bool = True):
        if variant not in (RANDOM_TURN, ALTERNATING_TURN):
            raise ValueError(f"the grid oracle supports random and alternating turns, not {variant!r}")
        if not mu.is_atomic:
            raise NoiseMeasureError("oracle requires atomic noise")
        h = eps / 8 if h_grid is None else float(h_grid)
        if _check_spacing and h > eps / 8 * (1 + 1e-12):
            raise ValueError("h_grid must be at most eps/8")
        self.domain, self.F, self.mu, self.eps, self.variant, self.h = domain, F, mu, eps, variant, h
        d = domain.dimension
        self.alpha = mu.alpha
        lo, hi = domain.bounding_box()
        pad = 2 * h
        self.origin = lo - pad
        self.shape = tuple(int(math.ceil((hi[i] - lo[i] + 2 * pad) / h)) + 1 for i in range(d))
        pts = self._nodes()
        dist = domain._dist(pts)
        self.interior = dist > self.alpha * eps
        self.band = (dist > 0) & ~self.interior
        self.fixed = ~self.interior
        self.idx = np.flatnonzero(self.interior)

        Ffn = F if callable(F) else (lambda y: F(y))
        base = np.empty(pts.shape[0])
        outside = ~(self.interior | self.band)
        if np.any(outside):
            base[outside] = Ffn(domain._nearest(pts[outside]))
        self.exit_hi = np.empty(pts.shape[0])
        self.exit_lo = np.empty(pts.shape[0])
        self.exit_hi[outside] = base[outside]
        self.exit_lo[outside] = base[outside]
        if np.any(self.band):
            xb = pts[self.band]
            budget = np.full(xb.shape[0], self.alpha * eps)
            ymax = exit_point(domain, xb, budget, preference=Ffn, n_dir=n_dir)
            ymin = exit_point(domain, xb, budget, preference=lambda y: -np.asarray(Ffn(y)), n_dir=n_dir)
            self.exit_hi[self.band] = Ffn(ymax)
            self.exit_lo[self.band] = Ffn(ymin)
        self.exit_hi[self.interior] = 0.0
        self.exit_lo[self.interior] = 0.0
        self.f_min = float(min(self.exit_lo[self.fixed].min(), self.exit_hi[self.fixed].min()))
        self.f_max = float(max(self.exit_lo[self.fixed].max(), self.exit_hi[self.fixed].max()))

        # offsets v + z for each candidate direction (sphere directions first, v = 0 last)
        dirs = np.vstack([direction_set(d, n_dir) * eps, np.zeros((1, d))])
        self.directions = dirs
        self.stencils = []  # per direction: list of (flat shift, weight) pairs
        strides = np.array([int(np.prod(self.shape[i + 1:])) for i in range(d)])
        self.strides = strides
        for v in dirs:
            pts_a, w_a = atom_offsets(mu, v)
            acc: dict[int, float] = {}
            for off, w in zip(v + pts_a, w_a):
                t = off / h
                b = np.floor(t).astype(np.int64)
                fr = t - b
                for corner in itertools.product((0, 1), repeat=d):
                    cw = w
                    for i, c in enumerate(corner):
                        cw *= fr[i] if c else 1.0 - fr[i]
                    if cw == 0.0:
                        continue
                    key = int(np.dot(b + np.array(corner), strides))
                    acc[key] = acc.get(key, 0.0) + cw
            self.stencils.append((np.array(list(acc.keys()), dtype=np.int64), np.array(list(acc.values()))))
        reach = max(int(np.max(np.abs(s))) for s, _ in self.stencils)
        n_total = int(np.prod(self.shape))
        if self.idx.size and (self.idx.min() - reach < 0 or self.idx.max() + reach >= n_total):
            raise RuntimeError("grid padding too small for the stencil")
        self._span = (int(self.idx.min()), int(self.idx.max()) + 1) if self.idx.size else (0, 0)

    def _nodes(self) -> np.ndarray:
        axes = [self.origin[i] + self.h * np.arange(n) for i, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    # -- operator ----------------------------------------------------------
    def expectations(self, u: np.ndarray) -> np.ndarray:
        """``E u(x + v_j + z)`` for every direction ``j`` at every interior node, shape (J, n_int)."""
        a, b = self._span
        local = self.idx - a
        out = np.empty((len(self.stencils), self.idx.size))
        acc = np.empty(b - a)
        for j, (shifts, wts) in enumerate(self.stencils):
            acc[:] = 0.0
            for s, w in zip(shifts, wts):
                acc += w * u[a + s:b + s]
            out[j] = acc[local]
        return out

    def initial(self) -> np.ndarray | tuple:
        mid = 0.5 * (self.f_min + self.f_max)
        if self.variant == RANDOM_TURN:
            u = np.where(self.fixed, 0.5 * (self.exit_hi + self.exit_lo), mid)
            return u
        return np.where(self.fixed, self.exit_hi, mid), np.where(self.fixed, self.exit_lo, mid)

    def apply(self, u):
        """One Jacobi application of the operator; returns the new field(s) and the argmax/argmin choices."""
        if self.variant == RANDOM_TURN:
            E = self.expectations(u)
            jmax, jmin = np.argmax(E, axis=0), np.argmin(E, axis=0)
            new = u.copy()
            cols = np.arange(self.idx.size)
            new[self.idx] = 0.5 * E[jmax, cols] + 0.5 * E[jmin, cols]
            return new, (jmax, jmin)
        u1, u2 = u
        E2, E1 = self.expectations(u2), self.expectations(u1)
        jmax, jmin = np.argmax(E2, axis=0), np.argmin(E1, axis=0)
        cols = np.arange(self.idx.size)
        n1, n2 = u1.copy(), u2.copy()
        n1[self.idx] = E2[jmax, cols]
        n2[self.idx] = E1[jmin, cols]
        return (n1, n2), (jmax, jmin)

    def T(self, u):
        return self.apply(u)[0]

    def residual(self, u, Tu) -> float:
        if self.variant == RANDOM_TURN:
            return float(np.max(np.abs(Tu[self.idx] - u[self.idx]))) if self.idx.size else 0.0
        return max(float(np.max(np.abs(a[self.idx] - b[self.idx]))) for a, b in zip(u, Tu)) if self.idx.size else 0.0

    # -- frozen-policy solve ------------------------------------------------
    def _policy_matrix(self, choice: np.ndarray, scale: float):
        """Sparse rows ``scale * sum_s w_s u[idx + s]`` for interior nodes under direction choice."""
        rows, cols, vals = [], [], []
        for j, (shifts, wts) in enumerate(self.stencils):
            sel = np.flatnonzero(choice == j)
            if sel.size == 0:
                continue
            for s, w in zip(shifts, wts):
                rows.append(sel)
                cols.append(self.idx[sel] + s)
                vals.append(np.full(sel.size, scale * w))
        n_total = int(np.prod(self.shape))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.idx.size, n_total)
        )

    def policy_solve(self, u, policies):
        """Exact value of the frozen choices; None when the linear system is unusable."""
        jmax, jmin = policies
        n_int = self.idx.size
        pos = np.full(int(np.prod(self.shape)), -1, dtype=np.int64)
        pos[self.idx] = np.arange(n_int)
        fixed_cols = np.flatnonzero(self.fixed)

        def split(M):
            M = M.tocsc()
            return M[:, self.idx], M[:, fixed_cols]

        try:
            if self.variant == RANDOM_TURN:
                P = self._policy_matrix(jmax, 0.5) + self._policy_matrix(jmin, 0.5)
                Pin, Pfix = split(P)
                rhs = Pfix @ u[fixed_cols]
                A = sp.identity(n_int, format="csr") - Pin
                sol = _linear_solve(A, rhs, u[self.idx])
                out = u.copy()
                out[self.idx] = sol
            else:
                u1, u2 = u
                Pa_in, Pa_fix = split(self._policy_matrix(jmax, 1.0))  # u1 = Pa u2
                Pb_in, Pb_fix = split(self._policy_matrix(jmin, 1.0))  # u2 = Pb u1
                I = sp.identity(n_int, format="csc")
                A = sp.bmat([[I, -Pa_in], [-Pb_in, I]], format="csc")
                rhs = np.concatenate([Pa_fix @ u2[fixed_cols], Pb_fix @ u1[fixed_cols]])
                sol = _linear_solve(A.tocsr(), rhs, np.concatenate([u1[self.idx], u2[self.idx]]))
                o1, o2 = u1.copy(), u2.copy()
                o1[self.idx] = sol[:n_int]
                o2[self.idx] = sol[n_int:]
                out = (o1, o2)
        except (RuntimeError, ValueError):
            return None
        flat = np.concatenate(out) if isinstance(out, tuple) else out
        tol = 1e-9 * max(1.0, self.f_max - self.f_min)
        if not np.all(np.isfinite(flat)) or flat.min() < self.f_min - tol or flat.max() > self.f_max + tol:
            return None
        return out


def _linear_solve(A, rhs, guess):
    """Warm-started BiCGSTAB; falls back to a direct solve on small systems."""
    if A.shape[0] <= 4000:
        return spla.spsolve(A.tocsc(), rhs)
    sol, info = spla.bicgstab(A, rhs, x0=guess, rtol=1e-12, atol=0.0, maxiter=20 * int(math.sqrt(A.shape[0])) + 200)
    if info != 0:
        raise RuntimeError("frozen-policy solve did not converge")
    return sol


def _iterate(prob: BellmanProblem, tol: float, max_iter: int, accelerate: bool):
    u = prob.initial()
    it = solves = 0
    res = math.inf
    sweeps_only = not accelerate
    while it < max_iter:
        Tu, pol = prob.apply(u)
        it += 1
        res = prob.residual(u, Tu)
        u = Tu
        if res < tol:
            break
        if sweeps_only:
            continue
        cand = prob.policy_solve(u, pol)
        solves += 1
        if cand is None:
            sweeps_only = True
            continue
        Tc, _ = prob.apply(cand)
        it += 1
        rc = prob.residual(cand, Tc)
        if rc <= res:
            u, res = Tc, rc
        elif solves > 50:
            sweeps_only = True
    return u, res, it, solves


def solve_dpp(domain: Domain, F, mu: NoiseMeasure, eps: float, variant: str = RANDOM_TURN,
              h_grid: float | None = None, tol: float | None = None, max_iter: int | None = None,
              n_dir: int | None = None, accelerate: bool = True, x0=None,
              estimate_grid_error: bool = False, _check_spacing: bool = True) -> ValueField:
    """Iterate the grid operator to its fixed point.

    With ``x0`` and ``estimate_grid_error`` the problem is solved again on the
    doubled spacing and ``|u_h(x0) - u_2h(x0)|`` is stored as ``grid_error``.
    """
    prob = BellmanProblem(domain, F, mu, eps, variant, h_grid, n_dir, _check_spacing)
    span = prob.f_max - prob.f_min
    tol = 1e-6 * max(span, 1e-300) if tol is None else tol
    if max_iter is None:
        max_iter = int(10 * (domain.diameter / eps) ** 2)
    u, res, it, solves = _iterate(prob, tol, max_iter, accelerate)
    first = u if variant == RANDOM_TURN else u[0]
    second = None if variant == RANDOM_TURN else u[1]
    out = ValueField(
        origin=prob.origin, spacing=prob.h, shape=prob.shape, values=first.copy(),
        interior=prob.interior.reshape(prob.shape), band=prob.band.reshape(prob.shape), eps=eps,
        variant=variant, residual=res, converged=res < tol, iterations=it, solves=solves,
        f_range=(prob.f_min, prob.f_max), second=None if second is None else second.copy(),
        stats={"nodes": int(np.prod(prob.shape)), "interior_nodes": int(prob.idx.size),
               "directions": len(prob.stencils), "tol": tol},
    )
    if estimate_grid_error:
        if x0 is None:
            raise ValueError("grid-error estimate needs x0")
        coarse = solve_dpp(domain, F, mu, eps, variant, 2 * prob.h, tol, max_iter, n_dir, accelerate,
                           _check_spacing=False)
        out.grid_error = abs(out.value_at(x0) - coarse.value_at(x0))
    return out
