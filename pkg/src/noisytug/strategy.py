"""Player strategies.

A strategy maps the game history to a move of length at most ``eps``.  The
engine evaluates many plays at once, so strategies expose a batched
``moves(x, eps, rng)`` on the current positions ``x`` of shape ``(n, d)``.
Built-in strategies are Markov and only look at the current position.
Custom strategies that need the whole history set ``markov = False`` and
override :meth:`Strategy.move`.

A move containing NaN means "undefined here" (for example a vanishing
gradient); the engine replaces it by a uniformly random move of length
``eps`` and counts the fallback.

Besides moving, a strategy decides how to leave the domain when its player
wins a turn inside the termination band: ``exit="nearest"`` takes the nearest
boundary point, ``exit="greedy"`` optimizes the boundary payoff over the
candidate exit set (maximizing for player I, minimizing for player II).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernel as K
from .calculus import GRADIENT_FLOOR, QuadraticModel, _is_log_case, optimal_move, radial_exponent
from .noise import GameConstants


@dataclass
class History:
    """Positions ``x_0..x_k`` and moves ``v_1..v_k`` of one play."""

    positions: list
    moves: list = field(default_factory=list)
    terminated: bool = False

    @property
    def current(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def step(self) -> int:
        return len(self.moves)


def _as_eps(eps, n):
    return np.broadcast_to(np.asarray(eps, dtype=float), (n,))


def random_directions(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class Strategy:
    markov = True
    exit = "nearest"
    name = "strategy"

    def moves(self, x: np.ndarray, eps, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def move(self, history: History, eps: float, rng: np.random.Generator | None = None) -> np.ndarray:
        """Move for a single play given its history."""
        rng = rng or np.random.default_rng(0)
        return self.moves(np.asarray(history.current, dtype=float)[None, :], eps, rng)[0]

    # Spencer phase hooks --------------------------------------------------
    def directions(self, x: np.ndarray, eps, rng: np.random.Generator) -> np.ndarray:
        """Direction of length exactly ``eps`` when acting as the direction chooser."""
        v = self.moves(x, eps, rng)
        e = _as_eps(eps, x.shape[0])
        nrm = np.linalg.norm(v, axis=1)
        bad = ~(nrm > 0)
        out = v * (e / np.where(bad, 1.0, nrm))[:, None]
        if np.any(bad):
            out[bad] = random_directions(int(bad.sum()), x.shape[1], rng) * e[bad, None]
        return out

    def signs(self, x: np.ndarray, v: np.ndarray, eps, rng: np.random.Generator) -> np.ndarray:
        """Sign in {-1, +1} applied to the opponent's direction ``v``; +1 on ties."""
        own = np.nan_to_num(self.moves(x, eps, rng))
        return np.where(np.einsum("ij,ij->i", own, v) >= 0, 1.0, -1.0)

    def describe(self) -> dict:
        return {"kind": self.name, "exit": self.exit}

    def kernel_spec(self, d: int):
        """``(code, params, arcs)`` for the compiled engine, or None if not compilable."""
        return None


_NO_ARCS = np.zeros((0, 2))


class RadialField:
    """Direction field ``orientation * (x - center)/|x - center|``, zero at the center."""

    def __init__(self, center, orientation: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.orientation = float(orientation)

    def __call__(self, x):
        rel = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(rel, axis=-1, keepdims=True)
        return self.orientation * rel / np.where(r > 0, r, np.inf)


class ConstantField:
    """The same direction everywhere."""

    def __init__(self, direction):
        direction = np.asarray(direction, dtype=float)
        self.direction = direction / np.linalg.norm(direction)

    def __call__(self, x):
        return np.broadcast_to(self.direction, np.shape(x)).copy()


class ArcHarmonicField:
    """Gradient of the harmonic measure, in the unit disc, of a union of boundary arcs ``[a_j, b_j]``.

    The harmonic measure of one arc seen from ``x`` is the angle it subtends
    divided by pi, minus its length over 2 pi.
    """

    def __init__(self, arcs):
        self.arcs = np.asarray(arcs, dtype=float).reshape(-1, 2)

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for a, b in self.arcs:
            za, zb = np.exp(1j * a), np.exp(1j * b)
            z = x[:, 0] + 1j * x[:, 1]
            out += np.angle((zb - z) / (za - z)) / np.pi - (b - a) / (2 * np.pi)
        return out

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.zeros_like(x)
        for a, b in self.arcs:
            for ang, sg in ((a, -1.0), (b, 1.0)):
                X = np.cos(ang) - x[:, 0]
                Y = np.sin(ang) - x[:, 1]
                r2 = X * X + Y * Y
                g[:, 0] += sg * Y / r2
                g[:, 1] -= sg * X / r2
        return g


class GradientStrategy(Strategy):
    """Tug ``eps`` along ``+grad u`` (``sign=+1``, player I) or ``-grad u`` (``sign=-1``).

    ``grad`` is a vectorized gradient; when omitted it is estimated from ``u``
    by central differences with step ``h``.
    """

    name = "gradient"

    def __init__(self, u: Callable | None = None, grad: Callable | None = None, sign: float = 1.0,
                 exit: str = "nearest", h: float = 1e-6):
        if u is None and grad is None:
            raise ValueError("gradient strategy needs u or its gradient")
        self.u = u
        self.grad = grad
        self.sign = float(sign)
        self.exit = exit
        self.h = h

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = self.h
            out[:, i] = (self.u(x + e) - self.u(x - e)) / (2 * self.h)
        return out

    def moves(self, x, eps, rng):
        g = self.gradient(x)
        nrm = np.linalg.norm(g, axis=1)
        e = _as_eps(eps, x.shape[0])
        with np.errstate(invalid="ignore", divide="ignore"):
            v = self.sign * g * (e / nrm)[:, None]
        v[~(nrm > GRADIENT_FLOOR)] = np.nan
        return v

    def describe(self):
        return {"kind": self.name, "sign": self.sign, "exit": self.exit}

    def kernel_spec(self, d):
        if self.exit != "nearest":
            return None
        if isinstance(self.grad, RadialField):
            par = np.append(self.grad.center, self.sign * self.grad.orientation)
            return K.RADIAL, par, _NO_ARCS
        if isinstance(self.grad, ConstantField):
            return K.CONST, self.sign * self.grad.direction, _NO_ARCS
        if isinstance(self.grad, ArcHarmonicField) and d == 2:
            return K.ARC_GRAD, np.array([self.sign]), self.grad.arcs
        return None


def gradient_strategy(u: Callable | None = None, grad: Callable | None = None, maximize: bool = True,
                      exit: str = "nearest") -> GradientStrategy:
    return GradientStrategy(u, grad, 1.0 if maximize else -1.0, exit)


class PullToward(Strategy):
    """Pull ``eps`` toward a fixed point ``z`` (the full remaining vector when closer than ``eps``).

    ``sign=-1`` pulls directly away from ``z``.
    """

    name = "pull"

    def __init__(self, target, sign: float = 1.0, exit: str = "nearest"):
        self.target = np.asarray(target, dtype=float)
        self.sign = float(sign)
        self.exit = exit

    def moves(self, x, eps, rng):
        delta = self.target - x
        dist = np.linalg.norm(delta, axis=1)
        e = _as_eps(eps, x.shape[0])
        scale = np.where(dist > e, e / np.where(dist > 0, dist, 1.0), 1.0)
        v = delta * scale[:, None]
        if self.sign < 0:
            v = -delta * (e / np.where(dist > 0, dist, 1.0))[:, None]
            v[dist == 0] = np.nan
        return v

    def describe(self):
        return {"kind": self.name, "target": self.target.tolist(), "sign": self.sign, "exit": self.exit}

    def kernel_spec(self, d):
        if self.exit != "nearest":
            return None
        return K.PULL, np.append(self.target, self.sign), _NO_ARCS


def radial_reference_strategy(d: int, p: float, center=None, maximize: bool = True,
                              exit: str = "nearest") -> GradientStrategy:
    """Gradient strategy of the radial p-harmonic reference function centred at ``center``."""
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    c = radial_exponent(p, d)
    up = 1.0 if (_is_log_case(p, d) or c > 0) else -1.0
    return GradientStrategy(grad=RadialField(center, up), sign=1.0 if maximize else -1.0, exit=exit)


def pull_toward(z, exit: str = "nearest") -> PullToward:
    return PullToward(z, 1.0, exit)


class UniformRandom(Strategy):
    """A uniformly random direction of length ``eps`` every turn."""

    name = "uniform_random"

    def __init__(self, exit: str = "nearest"):
        self.exit = exit

    def moves(self, x, eps, rng):
        return random_directions(x.shape[0], x.shape[1], rng) * _as_eps(eps, x.shape[0])[:, None]

    def kernel_spec(self, d):
        return (K.RANDOM, np.zeros(1), _NO_ARCS) if self.exit == "nearest" else None


class StandStill(Strategy):
    name = "zero"

    def moves(self, x, eps, rng):
        return np.zeros_like(x)

    def kernel_spec(self, d):
        return (K.ZERO, np.zeros(1), _NO_ARCS) if self.exit == "nearest" else None


class PathFollow(Strategy):
    """Follow a polyline: pull toward the successor of the nearest path vertex.

    A Markov stand-in for chaining pulls through a sequence of targets; the
    last vertex is pulled toward once reached.
    """

    name = "path"

    def __init__(self, points: Sequence, exit: str = "nearest"):
        self.points = np.asarray(points, dtype=float)
        self.exit = exit

    def moves(self, x, eps, rng):
        d2 = ((x[:, None, :] - self.points[None]) ** 2).sum(axis=2)
        nxt = np.minimum(np.argmin(d2, axis=1) + 1, len(self.points) - 1)
        delta = self.points[nxt] - x
        dist = np.linalg.norm(delta, axis=1)
        e = _as_eps(eps, x.shape[0])
        scale = np.where(dist > e, e / np.where(dist > 0, dist, 1.0), 1.0)
        return delta * scale[:, None]

    def describe(self):
        return {"kind": self.name, "points": self.points.tolist(), "exit": self.exit}


class NearestPointPull(Strategy):
    """Pull toward the nearest point of a target set given by ``project(x) -> point``."""

    name = "nearest_point_pull"

    def __init__(self, project: Callable[[np.ndarray], np.ndarray], exit: str = "nearest", label: str = ""):
        self.project = project
        self.exit = exit
        self.label = label

    def moves(self, x, eps, rng):
        delta = self.project(x) - x
        dist = np.linalg.norm(delta, axis=1)
        e = _as_eps(eps, x.shape[0])
        scale = np.where(dist > e, e / np.where(dist > 0, dist, 1.0), 1.0)
        return delta * scale[:, None]

    def describe(self):
        return {"kind": self.name, "label": self.label, "exit": self.exit}


class ArcSetPull(Strategy):
    """Pull toward the nearest point of a union of arcs ``[a_j, b_j]`` (angles) on a circle (d = 2)."""

    name = "arc_set_pull"

    def __init__(self, arcs, center=(0.0, 0.0), radius: float = 1.0, exit: str = "nearest"):
        self.arcs = np.asarray(arcs, dtype=float).reshape(-1, 2)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.exit = exit

    def target(self, x: np.ndarray) -> np.ndarray:
        rel = x - self.center
        th = np.arctan2(rel[:, 1], rel[:, 0])[:, None]
        a, b = self.arcs[:, 0], self.arcs[:, 1]
        mid = 0.5 * (a + b)
        t = th - mid
        t = t - 2 * np.pi * np.floor((t + np.pi) / (2 * np.pi)) + mid
        c = np.clip(t, a, b)
        best = np.argmin(np.abs(t - c), axis=1)
        ang = c[np.arange(len(x)), best]
        return self.center + self.radius * np.column_stack([np.cos(ang), np.sin(ang)])

    def moves(self, x, eps, rng):
        delta = self.target(x) - x
        dist = np.linalg.norm(delta, axis=1)
        e = _as_eps(eps, x.shape[0])
        scale = np.where(dist > e, e / np.where(dist > 0, dist, 1.0), 1.0)
        return delta * scale[:, None]

    def kernel_spec(self, d):
        if self.exit != "nearest" or d != 2:
            return None
        return K.ARC, np.array([*self.center, self.radius]), self.arcs

    def describe(self):
        return {"kind": self.name, "arcs": len(self.arcs), "exit": self.exit}


class QuadraticOptimal(Strategy):
    """Exact one-step optimizer of the local quadratic model of ``u``."""

    name = "quadratic_optimal"

    def __init__(self, u: Callable, constants: GameConstants, maximize: bool = True, exit: str = "nearest"):
        self.u = u
        self.constants = constants
        self.maximize = maximize
        self.exit = exit

    def moves(self, x, eps, rng):
        e = _as_eps(eps, x.shape[0])
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            model = QuadraticModel.from_function(self.u, xi)
            if np.linalg.norm(model.xi) <= GRADIENT_FLOOR:
                out[i] = np.nan
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[i] = optimal_move(model, float(e[i]), self.constants, self.maximize)
        return out


class SpencerSign(Strategy):
    """Sign chooser that makes ``(sigma v, grad u)`` nonnegative, +1 on ties.

    As a mover it behaves like the gradient strategy of ``u``.
    """

    name = "spencer_sign"

    def __init__(self, u: Callable | None = None, grad: Callable | None = None, exit: str = "nearest"):
        self._grad = GradientStrategy(u, grad, 1.0, exit)
        self.exit = exit

    def moves(self, x, eps, rng):
        return self._grad.moves(x, eps, rng)

    def signs(self, x, v, eps=None, rng=None):
        g = self._grad.gradient(x)
        return np.where(np.einsum("ij,ij->i", v, g) >= 0, 1.0, -1.0)

    def choose(self, history: History, v_candidate) -> int:
        x = np.asarray(history.current, dtype=float)[None, :]
        return int(self.signs(x, np.asarray(v_candidate, dtype=float)[None, :])[0])


def spencer_sign(u: Callable | None = None, grad: Callable | None = None) -> SpencerSign:
    return SpencerSign(u, grad)


class OrthogonalDirection(Strategy):
    """Direction chooser (d = 2) picking ``eps`` times the unit vector orthogonal to ``grad u``.

    As a mover it tugs along ``-grad u``.
    """

    name = "orthogonal_direction"

    def __init__(self, u: Callable | None = None, grad: Callable | None = None, exit: str = "nearest"):
        self._grad = GradientStrategy(u, grad, -1.0, exit)
        self.exit = exit

    def moves(self, x, eps, rng):
        return self._grad.moves(x, eps, rng)

    def directions(self, x, eps, rng):
        g = self._grad.gradient(x)
        nrm = np.linalg.norm(g, axis=1)
        e = _as_eps(eps, x.shape[0])
        rot = np.column_stack([-g[:, 1], g[:, 0]])
        with np.errstate(invalid="ignore", divide="ignore"):
            out = rot * (e / nrm)[:, None]
        bad = ~(nrm > GRADIENT_FLOOR)
        if np.any(bad):
            out[bad] = random_directions(int(bad.sum()), 2, rng) * e[bad, None]
        return out


class HistoryStrategy(Strategy):
    """Wrap a per-play function ``fn(history, eps) -> v`` (non-Markov)."""

    markov = False
    name = "custom"

    def __init__(self, fn: Callable[[History, float], np.ndarray], exit: str = "nearest"):
        self.fn = fn
        self.exit = exit

    def move(self, history, eps, rng=None):
        return np.asarray(self.fn(history, eps), dtype=float)

    def moves(self, x, eps, rng):
        raise TypeError("history strategies are evaluated per play")
