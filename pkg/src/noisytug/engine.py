"""Play tug of war with noise.

The engine advances a block of independent plays in lock-step.  Each block
owns its own random streams, spawned from ``SeedSequence(seed,
spawn_key=(block, stream))``, so a block's result depends only on ``(config,
strategies, seed, block, block size)`` and never on scheduling.

Rules of one turn, from position ``x``:

* the mover is decided (fair coin, alternation, or the Spencer/tug phase
  coin followed by a fair coin);
* if ``dist(x, boundary) <= alpha * eps`` the mover picks a boundary point
  within ``alpha * eps`` and the game ends with payoff ``F`` there;
* otherwise the mover picks ``|v| <= eps`` and the position becomes
  ``x + v + z`` with ``z ~ mu_v``.

A running payoff ``f(x) eps^2`` is credited to player I at every turn,
evaluated at the position the turn starts from.  Plays still running at the
step cap get terminal payoff 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import _kernel
from .geometry import Annulus, Ball, BoundaryFunction, Domain, PuncturedBall, exit_point
from .noise import ALTERNATING, RANDOM, GameConstants, NoiseMeasure, derive_constants, sample_noise_batch
from .strategy import History, Strategy, random_directions

RANDOM_TURN = "random"
ALTERNATING_TURN = "alternating"
SPENCER = "spencer"
VARIANTS = (RANDOM_TURN, ALTERNATING_TURN, SPENCER)

# stream ids inside a block
_TURN, _NOISE, _PHASE, _STRAT_I, _STRAT_II = range(5)

PLAYER_I, PLAYER_II, SPENCER_PHASE = 1, 2, 3


class GameAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class ShrinkSchedule:
    """Deterministic step sizes ``eps0 * 2**-j`` for the shrinking-step game.

    ``floor`` ends a play once the scheduled step falls below it.
    """

    eps0: float
    floor: float = 1e-12


@dataclass(frozen=True)
class AdaptiveStep:
    """Position-dependent step ``clip(dist / kappa, eps_min, eps_max)``.

    With ``kappa > alpha`` the game can only end once the step has reached
    ``eps_min``, so the boundary is resolved at scale ``eps_min``.
    """

    eps_min: float
    eps_max: float
    kappa: float = 10.0

    def __call__(self, dist: np.ndarray) -> np.ndarray:
        return np.clip(dist / self.kappa, self.eps_min, self.eps_max)


@dataclass(frozen=True)
class GameConfig:
    domain: Domain
    noise: NoiseMeasure
    eps: float
    F: BoundaryFunction | Callable
    x0: np.ndarray
    variant: str = RANDOM_TURN
    p_interp: float = math.inf
    running_payoff: Callable | float | None = None
    step_cap: int | None = None
    shrink: ShrinkSchedule | None = None
    step_rule: AdaptiveStep | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == SPENCER and not self.p_interp >= 1:
            raise ValueError("p_interp must lie in [1, inf]")
        if self.step_cap is not None and self.step_cap < 1:
            raise ValueError("step_cap must be at least 1")
        if self.x0.shape != (self.domain.dimension,):
            raise ValueError("x0 has the wrong dimension")
        if self.noise.dimension != self.domain.dimension:
            raise ValueError("noise and domain dimensions differ")

    @property
    def constants(self) -> GameConstants:
        return derive_constants(self.noise, ALTERNATING if self.variant == ALTERNATING_TURN else RANDOM)

    @property
    def alpha(self) -> float:
        return self.noise.alpha

    def resolved_step_cap(self) -> int:
        if self.step_cap is not None:
            return int(self.step_cap)
        eps = self.eps
        if self.step_rule is not None:
            eps = self.step_rule.eps_min
        return int(math.ceil(50.0 * self.domain.diameter**2 / eps**2))

    def with_eps(self, eps: float) -> "GameConfig":
        return replace(self, eps=eps)

    def describe(self) -> dict:
        F = self.F
        return {
            "domain": self.domain.describe(),
            "noise": self.noise.describe(),
            "eps": self.eps,
            "x0": self.x0.tolist(),
            "variant": self.variant,
            "p_interp": None if math.isinf(self.p_interp) else self.p_interp,
            "F": getattr(F, "descriptor", {"kind": "callable"}),
            "running_payoff": self.running_payoff is not None,
            "step_cap": self.resolved_step_cap(),
            "shrink": None if self.shrink is None else vars(self.shrink),
            "step_rule": None if self.step_rule is None else vars(self.step_rule),
        }


@dataclass
class Outcome:
    terminal_point: np.ndarray | None
    payoff: float
    steps: int
    terminated: bool
    rng_seed: int
    running: float = 0.0
    history: list | None = None
    fallback_moves: int = 0
    clamped_moves: int = 0
    flags: tuple = ()


@dataclass
class BatchResult:
    payoff: np.ndarray
    running: np.ndarray
    steps: np.ndarray
    terminated: np.ndarray
    terminal: np.ndarray
    final: np.ndarray
    fallback_moves: int = 0
    clamped_moves: int = 0
    flags: set = field(default_factory=set)
    trace: list | None = None


def block_streams(seed: int, block: int) -> list[np.random.Generator]:
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block, s))))
        for s in range(5)
    ]


def turn_order(variant: str, k: int, rng: np.random.Generator, n: int = 1, p_interp: float = math.inf,
               phase_rng: np.random.Generator | None = None) -> np.ndarray:
    """Mover codes for turn ``k`` (1-based) of ``n`` plays.

    ``PLAYER_I``/``PLAYER_II`` for tug turns, ``SPENCER_PHASE`` when the
    Spencer rule applies (player II picks a direction, player I its sign).
    Random turns draw one uniform per play from ``rng``; the Spencer phase
    coin (probability ``1/p_interp``) is drawn from ``phase_rng``.
    """
    if variant == ALTERNATING_TURN:
        return np.full(n, PLAYER_I if k % 2 == 1 else PLAYER_II)
    coin = rng.random(n)
    mover = np.where(coin < 0.5, PLAYER_I, PLAYER_II)
    if variant == SPENCER:
        p_phase = 0.0 if math.isinf(p_interp) else 1.0 / p_interp
        phase = (rng if phase_rng is None else phase_rng).random(n) < p_phase
        mover = np.where(phase, SPENCER_PHASE, mover)
    return mover


def _payoff_fn(F):
    return F if callable(F) else (lambda y: F(y))


class _Runner:
    """State and step loop for one block."""

    def __init__(self, config: GameConfig, S_I: Strategy, S_II: Strategy, seed: int, block: int, n: int,
                 record: bool = False):
        self.cfg = config
        self.S = {PLAYER_I: S_I, PLAYER_II: S_II}
        self.n = n
        self.seed = seed
        self.gens = block_streams(seed, block)
        self.record = record
        self.needs_history = not (S_I.markov and S_II.markov)
        d = config.domain.dimension
        self.x = np.tile(config.x0, (n, 1))
        self.payoff = np.zeros(n)
        self.running = np.zeros(n)
        self.steps = np.zeros(n, dtype=np.int64)
        self.terminated = np.zeros(n, dtype=bool)
        self.terminal = np.full((n, d), np.nan)
        self.fallbacks = 0
        self.clamped = 0
        self.flags: set = set()
        self.trace: list | None = [] if record else None
        self.histories = [History([config.x0.copy()]) for _ in range(n)] if self.needs_history else None

    # -- helpers ------------------------------------------------------------
    def _strategy_moves(self, who: int, rows: np.ndarray, x: np.ndarray, eps: np.ndarray) -> np.ndarray:
        S = self.S[who]
        gen = self.gens[_STRAT_I if who == PLAYER_I else _STRAT_II]
        if S.markov:
            v = np.asarray(S.moves(x, eps, gen), dtype=float)
        else:
            v = np.array([S.move(self.histories[r], float(e), gen) for r, e in zip(rows, eps)], dtype=float)
        bad = np.any(~np.isfinite(v), axis=1)
        if np.any(bad):
            self.fallbacks += int(bad.sum())
            v[bad] = random_directions(int(bad.sum()), x.shape[1], gen) * eps[bad, None]
        nrm = np.linalg.norm(v, axis=1)
        over = nrm > eps * (1 + 1e-12)
        if np.any(over):
            self.clamped += int(over.sum())
            self.flags.add("move_clamped")
            v[over] *= (eps[over] / nrm[over])[:, None]
        return v

    def _exit(self, who: int, x: np.ndarray, budget: np.ndarray) -> np.ndarray:
        S = self.S[who]
        if getattr(S, "exit", "nearest") == "greedy":
            F = _payoff_fn(self.cfg.F)
            pref = F if who == PLAYER_I else (lambda y: -np.asarray(F(y)))
            return exit_point(self.cfg.domain, x, budget, preference=pref)
        return exit_point(self.cfg.domain, x, budget)

    def _record(self, k, idx, mover, v, z, xnew):
        for j, i in enumerate(idx):
            self.trace.append(
                {
                    "play": int(i),
                    "step": int(k),
                    "mover": {PLAYER_I: "I", PLAYER_II: "II", SPENCER_PHASE: "spencer"}[int(mover[j])],
                    "v": v[j].tolist(),
                    "z": z[j].tolist(),
                    "x": xnew[j].tolist(),
                }
            )

    # -- main loop ------------------------------------------------------------
    def run(self, shrinking: bool = False) -> BatchResult:
        cfg = self.cfg
        dom = cfg.domain
        alpha = cfg.alpha
        cap = cfg.resolved_step_cap()
        F = _payoff_fn(cfg.F)
        f = cfg.running_payoff
        idx = np.arange(self.n)
        g_turn, g_noise, g_phase = self.gens[_TURN], self.gens[_NOISE], self.gens[_PHASE]

        if shrinking:
            sched = cfg.shrink
            eps_j = np.zeros(self.n, dtype=np.int64)
            level = np.zeros(self.n, dtype=np.int64)
            d0 = dom._dist(self.x[:1])[0]
            j0 = 0
            while alpha * sched.eps0 * 2.0**-j0 >= d0:
                j0 += 1
            eps_j[:] = j0

        k = 0
        while idx.size:
            k += 1
            xa = self.x[idx]
            m = idx.size
            dist = dom._dist(xa)
            if shrinking:
                # triggers: inside the alpha*eps band, or a new dyadic distance level
                with np.errstate(divide="ignore"):
                    lvl = np.where(dist <= 0.5, np.floor(-np.log2(np.maximum(dist, 1e-300))), 0).astype(np.int64)
                new_level = lvl > level[idx]
                level[idx] = np.maximum(level[idx], lvl)
                eps_now = sched.eps0 * 2.0 ** -eps_j[idx].astype(float)
                trig = new_level | (dist <= alpha * eps_now)
                if np.any(trig):
                    j = np.maximum(eps_j[idx], level[idx])
                    need = np.ceil(np.log2(np.maximum(alpha * sched.eps0 / np.maximum(dist, 1e-300), 1.0)))
                    j = np.maximum(j, need.astype(np.int64))
                    # strictly inside: alpha * eps < dist
                    bump = alpha * sched.eps0 * 2.0 ** -j.astype(float) >= dist
                    j = j + bump
                    eps_j[idx] = np.where(trig, j, eps_j[idx])
                eps_a = sched.eps0 * 2.0 ** -eps_j[idx].astype(float)
                under = eps_a < sched.floor
                if np.any(under):
                    self.flags.add("eps_floor_reached")
                    done = idx[under]
                    self._finish_shrinking(done, k - 1)
                    keep = ~under
                    idx, xa, dist, eps_a = idx[keep], xa[keep], dist[keep], eps_a[keep]
                    m = idx.size
                    if m == 0:
                        break
            elif cfg.step_rule is not None:
                eps_a = cfg.step_rule(dist)
            else:
                eps_a = np.full(m, cfg.eps)

            mover = turn_order(cfg.variant, k, g_turn, m, cfg.p_interp, g_phase)

            if f is not None:
                fx = np.asarray(f(xa), dtype=float) if callable(f) else float(f)
                self.running[idx] += fx * eps_a**2

            band = dist <= alpha * eps_a
            if shrinking:
                band[:] = False
            if np.any(band):
                xb, mb, bb = xa[band], mover[band], alpha * eps_a[band]
                # a Spencer-phase turn in the band is settled by a fair coin like a tug turn
                sp_band = mb == SPENCER_PHASE
                if np.any(sp_band):
                    mb = mb.copy()
                    mb[sp_band] = np.where(g_phase.random(int(sp_band.sum())) < 0.5, PLAYER_I, PLAYER_II)
                yb = np.empty_like(xb)
                for who in (PLAYER_I, PLAYER_II):
                    sel = mb == who
                    if np.any(sel):
                        yb[sel] = self._exit(who, xb[sel], bb[sel])
                rows = idx[band]
                self.terminal[rows] = yb
                self.payoff[rows] = F(yb)
                self.steps[rows] = k
                self.terminated[rows] = True
                if self.record:
                    self._record(k, rows, mb, yb - xb, np.zeros_like(yb), yb)

            mv = ~band
            if np.any(mv):
                xm, em, mm = xa[mv], eps_a[mv], mover[mv]
                rows = idx[mv]
                v = np.zeros_like(xm)
                z = np.zeros_like(xm)
                for who in (PLAYER_I, PLAYER_II):
                    sel = mm == who
                    if np.any(sel):
                        v[sel] = self._strategy_moves(who, rows[sel], xm[sel], em[sel])
                tug = mm != SPENCER_PHASE
                if np.all(tug):
                    z = sample_noise_batch(cfg.noise, v, g_noise)
                elif np.any(tug):
                    z[tug] = sample_noise_batch(cfg.noise, v[tug], g_noise)
                sp = ~tug
                if np.any(sp):
                    dirs = self.S[PLAYER_II].directions(xm[sp], em[sp], self.gens[_STRAT_II])
                    sig = self.S[PLAYER_I].signs(xm[sp], dirs, em[sp], self.gens[_STRAT_I])
                    v[sp] = sig[:, None] * dirs
                xnew = xm + v + z
                if not np.all(np.isfinite(xnew)):
                    raise GameAbort(f"non-finite position at step {k}")
                self.x[rows] = xnew
                if self.needs_history:
                    for j, r in enumerate(rows):
                        self.histories[r].moves.append(v[j].copy())
                        self.histories[r].positions.append(xnew[j].copy())
                if self.record:
                    self._record(k, rows, mm, v, z, xnew)

            alive = ~self.terminated[idx]
            idx = idx[alive]
            if k >= cap and idx.size:
                self.flags.add("step_cap")
                if shrinking:
                    self._finish_shrinking(idx, k)
                else:
                    self.steps[idx] = k
                idx = idx[:0]

        return BatchResult(
            payoff=self.payoff + self.running,
            running=self.running,
            steps=self.steps,
            terminated=self.terminated,
            terminal=self.terminal,
            final=self.x,
            fallback_moves=self.fallbacks,
            clamped_moves=self.clamped,
            flags=self.flags,
            trace=self.trace,
        )

    def _finish_shrinking(self, rows: np.ndarray, k: int):
        # one play cannot observe its limit set; use F at the nearest boundary point
        y = self.cfg.domain._nearest(self.x[rows])
        self.terminal[rows] = y
        self.payoff[rows] = _payoff_fn(self.cfg.F)(y)
        self.steps[rows] = k
        self.terminated[rows] = False


def _compiled_args(config: GameConfig, S_I: Strategy, S_II: Strategy):
    """Kernel arguments when the configuration is covered by the compiled loop, else None."""
    if config.variant == SPENCER or config.shrink is not None:
        return None
    f = config.running_payoff
    if f is not None and not isinstance(f, (int, float)):
        return None
    dom = config.domain
    if isinstance(dom, Ball):
        dom_code, dom_par = _kernel.DOM_BALL, np.append(dom.center, dom.radius)
    elif isinstance(dom, Annulus):
        dom_code, dom_par = _kernel.DOM_SHELL, np.append(dom.center, [dom.inner, dom.outer])
    elif isinstance(dom, PuncturedBall):
        dom_code, dom_par = _kernel.DOM_SHELL, np.append(dom.center, [dom.core, dom.radius])
    else:
        return None
    d = dom.dimension
    specs = [S.kernel_spec(d) for S in (S_I, S_II)]
    if any(sp is None for sp in specs):
        return None
    mu = config.noise
    if mu.kind == "point":
        noise = (_kernel.NOISE_POINT, np.zeros((1, d)), np.ones(1), 0.0)
    elif mu.kind == "atoms":
        noise = (_kernel.NOISE_ATOMS, np.ascontiguousarray(mu.atoms, dtype=float), np.cumsum(mu.weights), 0.0)
    else:
        noise = (_kernel.NOISE_SPHERE, np.zeros((1, d)), np.ones(1), float(mu.radius))
    rule = config.step_rule
    rule_arr = np.zeros(3) if rule is None else np.array([rule.eps_min, rule.eps_max, rule.kappa], dtype=float)
    (c1, p1, a1), (c2, p2, a2) = specs
    return dict(
        x0=np.asarray(config.x0, dtype=float), dom_code=dom_code, dom=np.asarray(dom_par, dtype=float),
        noise_code=noise[0], atoms=noise[1], cumw=noise[2], radius=noise[3], alpha=float(config.alpha),
        eps_fixed=float(config.eps), rule=rule_arr, cap=config.resolved_step_cap(),
        alternating=config.variant == ALTERNATING_TURN,
        code1=c1, par1=np.asarray(p1, dtype=float), arcs1=np.ascontiguousarray(a1, dtype=float),
        code2=c2, par2=np.asarray(p2, dtype=float), arcs2=np.ascontiguousarray(a2, dtype=float),
        running=0.0 if f is None else float(f),
    )


def compiled_supported(config: GameConfig, S_I: Strategy, S_II: Strategy) -> bool:
    return _compiled_args(config, S_I, S_II) is not None


def _simulate_compiled(config: GameConfig, args: dict, seed: int, block: int, n: int) -> BatchResult:
    seeds = np.random.SeedSequence(seed, spawn_key=(block, 5)).generate_state(n, dtype=np.uint64)
    final, steps, term, running, fallbacks = _kernel.run_plays(seeds=seeds, **args)
    d = config.domain.dimension
    terminal = np.full((n, d), np.nan)
    payoff = np.zeros(n)
    if np.any(term):
        y = config.domain._nearest(final[term])
        terminal[term] = y
        payoff[term] = _payoff_fn(config.F)(y)
    flags = {"step_cap"} if not np.all(term) else set()
    return BatchResult(
        payoff=payoff + running, running=running, steps=steps, terminated=term, terminal=terminal,
        final=final, fallback_moves=int(fallbacks), flags=flags,
    )


def simulate_block(config: GameConfig, S_I: Strategy, S_II: Strategy, seed: int, block: int, n: int,
                   record: bool = False, engine: str = "auto") -> BatchResult:
    """Run ``n`` independent plays (block ``block`` of seed ``seed``).

    ``engine`` is ``"auto"`` (compiled loop when the configuration allows it),
    ``"compiled"`` or ``"array"``.  The two loops draw from different random
    streams, so they agree in distribution, not play by play.
    """
    if engine not in ("auto", "compiled", "array"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine != "array" and not record:
        args = _compiled_args(config, S_I, S_II)
        if args is not None:
            return _simulate_compiled(config, args, seed, block, n)
        if engine == "compiled":
            raise ValueError("configuration not supported by the compiled engine")
    shrinking = config.shrink is not None
    return _Runner(config, S_I, S_II, seed, block, n, record).run(shrinking=shrinking)


def _outcome(res: BatchResult, seed: int) -> Outcome:
    term = bool(res.terminated[0])
    tp = res.terminal[0]
    return Outcome(
        terminal_point=tp.copy() if np.all(np.isfinite(tp)) else None,
        payoff=float(res.payoff[0]),
        steps=int(res.steps[0]),
        terminated=term,
        rng_seed=seed,
        running=float(res.running[0]),
        history=res.trace,
        fallback_moves=res.fallback_moves,
        clamped_moves=res.clamped_moves,
        flags=tuple(sorted(res.flags)),
    )


def play(config: GameConfig, S_I: Strategy, S_II: Strategy, seed: int = 0, record: bool = True) -> Outcome:
    """One play of the fixed-step game; the trace is recorded by default."""
    if config.shrink is not None:
        raise ValueError("use play_shrinking for a shrinking-step configuration")
    return _outcome(simulate_block(config, S_I, S_II, seed, 0, 1, record), seed)


def play_shrinking(config: GameConfig, S_I: Strategy, S_II: Strategy, seed: int = 0, record: bool = False) -> Outcome:
    """One play of the shrinking-step game under the deterministic halving schedule."""
    if config.shrink is None:
        raise ValueError("config has no shrink schedule")
    return _outcome(simulate_block(config, S_I, S_II, seed, 0, 1, record), seed)


def dump_history(outcome: Outcome, path) -> None:
    """Write the recorded trace as JSON lines (step, mover, v, z, x)."""
    if outcome.history is None:
        raise ValueError("outcome has no recorded history")
    with open(path, "w") as fh:
        for row in outcome.history:
            fh.write(json.dumps({k: row[k] for k in ("step", "mover", "v", "z", "x")}) + "\n")
