"""Operators, quadratic one-step machinery and closed-form radial references."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .noise import RANDOM, GameConstants

GRADIENT_FLOOR = 1e-8
P_EQUALS_D_TOL = 1e-9


class VanishingGradientError(ValueError):
    pass


class MoveRegimeWarning(UserWarning):
    """The step size is outside the regime where the maximizer is known to be on the sphere."""


@dataclass(frozen=True)
class OperatorValues:
    laplacian: float
    inf_laplacian: float
    one_laplacian: float
    p_laplacian_G: float
    gradient: np.ndarray
    hessian: np.ndarray


def fd_gradient_hessian(u: Callable, x, h: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian of a scalar function at ``x``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if h is None:
        h = 1e-4 * (1.0 + np.linalg.norm(x))
    eye = np.eye(d) * h
    # stencil: x, x +- h e_i, x +- h e_i +- h e_j (i < j), evaluated in one call
    pts = [x]
    for i in range(d):
        pts += [x + eye[i], x - eye[i]]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        pts += [x + eye[i] + eye[j], x + eye[i] - eye[j], x - eye[i] + eye[j], x - eye[i] - eye[j]]
    vals = np.asarray(u(np.array(pts)), dtype=float)
    u0 = vals[0]
    grad = np.empty(d)
    hess = np.empty((d, d))
    for i in range(d):
        up, um = vals[1 + 2 * i], vals[2 + 2 * i]
        grad[i] = (up - um) / (2 * h)
        hess[i, i] = (up - 2 * u0 + um) / h**2
    base = 1 + 2 * d
    for k, (i, j) in enumerate(pairs):
        pp, pm, mp, mm = vals[base + 4 * k : base + 4 * k + 4]
        hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4 * h**2)
    return grad, hess


def operators_from_derivatives(grad: np.ndarray, hess: np.ndarray, p: float) -> OperatorValues:
    g2 = float(grad @ grad)
    if math.sqrt(g2) <= GRADIENT_FLOOR:
        raise VanishingGradientError("vanishing gradient: operators undefined in the classical sense")
    lap = float(np.trace(hess))
    inf_lap = float(grad @ hess @ grad) / g2
    one_lap = lap - inf_lap
    p_inv = 0.0 if math.isinf(p) else 1.0 / p
    return OperatorValues(
        laplacian=lap,
        inf_laplacian=inf_lap,
        one_laplacian=one_lap,
        p_laplacian_G=p_inv * one_lap + (1.0 - p_inv) * inf_lap,
        gradient=grad,
        hessian=hess,
    )


def operators_at(u: Callable, x, p: float, h: float | None = None) -> OperatorValues:
    """Laplacian, infinity-, 1- and game p-Laplacian of ``u`` at ``x`` by central differences.

    ``u`` must accept an ``(n, d)`` array and return ``(n,)`` values.
    """
    grad, hess = fd_gradient_hessian(u, x, h)
    return operators_from_derivatives(grad, hess, p)


# ---------------------------------------------------------------------------
# quadratic one-step model


@dataclass(frozen=True)
class QuadraticModel:
    """``phi(x) = c + x^T A x + (xi, x)`` around the current position (taken as origin)."""

    A: np.ndarray
    xi: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.c + np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.xi

    @classmethod
    def from_function(cls, u: Callable, x, h: float | None = None) -> "QuadraticModel":
        """Second-order Taylor model of ``u`` at ``x`` (coordinates relative to ``x``)."""
        x = np.asarray(x, dtype=float)
        grad, hess = fd_gradient_hessian(u, x, h)
        return cls(A=0.25 * (hess + hess.T), xi=grad, c=float(u(x[None])[0]))


def b_matrix(model: QuadraticModel, constants: GameConstants) -> np.ndarray:
    """Matrix ``B`` with ``E phi(v + z) = phi(0) + (xi, v) + v^T B v``."""
    A = model.A
    d = A.shape[0]
    bq, bp = constants.beta * constants.q_inv, constants.beta * constants.p_inv
    extra = 0.0 if constants.turn_mode == RANDOM else 1.0
    return (bq - bp + extra) * A + bp * np.trace(A) * np.eye(d)


def expected_quadratic(model: QuadraticModel, v, constants: GameConstants) -> float:
    """``psi(v) = (xi, v) + v^T B v``: expected change of ``phi`` after move ``v`` plus noise."""
    v = np.asarray(v, dtype=float)
    B = b_matrix(model, constants)
    return float(model.xi @ v + v @ B @ v)


def move_regime_scale(model: QuadraticModel, constants: GameConstants) -> float:
    """``4 ||B|| / |xi|``; the maximizer sits near ``eps xi/|xi|`` when ``eps < 1/zeta``."""
    B = b_matrix(model, constants)
    return 4.0 * np.linalg.norm(B, 2) / np.linalg.norm(model.xi)


def _sphere_max(xi: np.ndarray, B: np.ndarray, eps: float) -> np.ndarray:
    """Maximize ``xi.v + v^T B v`` on ``|v| = eps``.

    In the eigenbasis of ``B`` the maximizer is ``w = g / (2 (mu - lam))``
    with ``mu > lam_max`` fixed by ``|w| = eps``; ``|w|`` decreases in ``mu``
    so the root is bracketed by ``|g_top| / (2 eps) <= mu - lam_max <= |g| / (2 eps)``.
    """
    lam, Q = np.linalg.eigh(B)
    g = Q.T @ xi
    top = lam[-1]
    gap = top - lam
    tied = gap <= 1e-12 * max(1.0, np.max(np.abs(lam)))
    g_top = float(np.linalg.norm(g[tied]))
    g_all = float(np.linalg.norm(g))

    if g_top <= 1e-14 * g_all:
        safe = np.where(tied, 1.0, gap)
        rest = np.where(tied, 0.0, g / (2.0 * safe))
        rn = float(np.linalg.norm(rest))
        if rn <= eps:
            rest[np.flatnonzero(tied)[-1]] = math.sqrt(max(eps**2 - rn**2, 0.0))
            return Q @ rest

    def excess(t):
        return float(np.linalg.norm(g / (2.0 * (t + gap)))) - eps

    t_hi = g_all / (2.0 * eps)
    t_lo = g_top / (2.0 * eps)
    if t_lo <= 0.0 or excess(t_lo) < 0.0:
        t_lo = t_hi * 1e-18
        while excess(t_lo) < 0.0 and t_lo > 1e-300:
            t_lo *= 1e-6
    if excess(t_hi) > 0.0:
        return Q @ (g / (2.0 * (t_hi + gap)))
    t = brentq(excess, t_lo, t_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = g / (2.0 * (t + gap))
    w *= eps / np.linalg.norm(w)
    return Q @ w


def optimal_move(model: QuadraticModel, eps: float, constants: GameConstants, maximize: bool = True) -> np.ndarray:
    """Maximizer (or minimizer) of ``psi`` over the closed ball of radius ``eps``.

    Solved exactly through the eigen-decomposition of ``B`` and a 1-d secular
    search.  A :class:`MoveRegimeWarning` is issued when ``eps >= 1/zeta``;
    the returned move is still the exact ball optimum (an interior stationary
    point is checked in that regime).
    """
    xi = model.xi
    if np.linalg.norm(xi) == 0.0:
        raise ValueError("gradient-free quadratic step undefined (xi = 0)")
    B = b_matrix(model, constants)
    sgn = 1.0 if maximize else -1.0
    xs, Bs = sgn * xi, sgn * B
    v = _sphere_max(xs, Bs, eps)
    zeta = 4.0 * np.linalg.norm(B, 2) / np.linalg.norm(xi)
    if eps * zeta >= 1.0:
        warnings.warn(
            f"eps={eps} is outside the sphere-maximizer regime (eps*zeta={eps * zeta:.3g} >= 1)",
            MoveRegimeWarning,
            stacklevel=2,
        )
        lam = np.linalg.eigvalsh(Bs)
        if lam[-1] < 0:
            interior = np.linalg.solve(-2.0 * Bs, xs)
            if np.linalg.norm(interior) <= eps:
                psi = lambda w: xs @ w + w @ Bs @ w  # noqa: E731
                if psi(interior) > psi(v):
                    v = interior
    return v


@dataclass(frozen=True)
class OneStepBound:
    lower_bound: float
    M: float
    p_laplacian: float


def one_step_bound(model: QuadraticModel, eps: float, constants: GameConstants) -> OneStepBound:
    """Guaranteed one-step expected value of ``phi`` when player I tugs along the gradient.

    ``E[phi(x1)] >= phi(x0) + (beta/2) Delta_p phi(x0) eps^2 - M eps^3`` with
    ``M = 16 beta (d + 1) ||A||^2 / |xi|``, whatever player II does.  Random
    turn order only.
    """
    if constants.turn_mode != RANDOM:
        raise ValueError("one_step_bound is stated for random turn order")
    xi = model.xi
    xn = float(np.linalg.norm(xi))
    if xn == 0.0:
        raise ValueError("gradient-free quadratic step undefined (xi = 0)")
    d = model.A.shape[0]
    ops = operators_from_derivatives(xi, 2.0 * model.A, constants.p)
    M = 16.0 * constants.beta * (d + 1) * np.linalg.norm(model.A, 2) ** 2 / xn
    lb = model.c + 0.5 * constants.beta * ops.p_laplacian_G * eps**2 - M * eps**3
    return OneStepBound(lower_bound=float(lb), M=float(M), p_laplacian=ops.p_laplacian_G)


# ---------------------------------------------------------------------------
# radial p-harmonic references


def radial_exponent(p: float, d: int) -> float:
    """``c(p, d) = (p - d)/(p - 1)``; ``1`` in the limit ``p = inf``."""
    if math.isinf(p):
        return 1.0
    return (p - d) / (p - 1.0)


def _is_log_case(p: float, d: int) -> bool:
    return not math.isinf(p) and abs(p - d) < P_EQUALS_D_TOL


def radial_reference(d: int, p: float, x) -> np.ndarray | float:
    """``rho_{d,p}(x) = |x|^c`` (``log|x|`` when ``p = d``), p-harmonic off the origin."""
    if not p > 1:
        raise ValueError("radial reference needs p > 1")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("radial reference is singular at the origin")
    if _is_log_case(p, d):
        out = np.log(r)
    else:
        out = r ** radial_exponent(p, d)
    return float(out) if np.ndim(out) == 0 else out


def radial_reference_gradient(d: int, p: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise ValueError("radial reference is singular at the origin")
    if _is_log_case(p, d):
        return x / r**2
    c = radial_exponent(p, d)
    return c * r ** (c - 2.0) * x


def annulus_hit_prob(s: float, t: float, p: float, d: int) -> float:
    """``b = (t^c - 1)/(t^c - s^c)``: limiting chance of reaching the inner sphere first.

    Radii are in units of the starting radius; the ``p = d`` case uses
    ``log t / (log t - log s)``.
    """
    if not 0 < s < 1 < t:
        raise ValueError("need 0 < s < 1 < t")
    c = radial_exponent(p, d)
    if _is_log_case(p, d) or abs(c) < 1e-12:
        return math.log(t) / (math.log(t) - math.log(s))
    lt, ls = math.log(t), math.log(s)
    return math.expm1(c * lt) / (math.expm1(c * lt) - math.expm1(c * ls))
