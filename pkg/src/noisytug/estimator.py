"""Monte Carlo estimates built on the engine.

Plays are grouped into fixed-size blocks; block ``b`` of a run with seed
``s`` always simulates the same plays, so estimates do not depend on how many
threads execute the blocks.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import AdaptiveStep, GameConfig, simulate_block
from .geometry import Ball, Domain, Intersection, PuncturedBall, indicator_function
from .noise import measure_for_p
from .strategy import ArcHarmonicField, GradientStrategy, PullToward, RadialField, Strategy, UniformRandom

BLOCK = 4096


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("NOISYTUG_THREADS")
    if env is not None:
        threads = int(env)
    if not threads:
        return os.cpu_count() or 1
    return max(1, int(threads))


def fingerprint(config: GameConfig, S_I: Strategy, S_II: Strategy) -> str:
    desc = {"config": config.describe(), "I": S_I.describe(), "II": S_II.describe()}
    return hashlib.sha256(json.dumps(desc, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class ValueEstimate:
    mean: float
    std_error: float
    n_plays: int
    cap_hit_fraction: float
    fingerprint: str
    seed: int
    mean_steps: float = 0.0
    fallback_moves: int = 0
    flags: tuple = ()

    def ci(self, level: float = 0.99) -> tuple[float, float]:
        from scipy.stats import norm

        half = norm.ppf(0.5 + level / 2) * self.std_error
        return self.mean - half, self.mean + half


def run_plays(config: GameConfig, S_I: Strategy, S_II: Strategy, n: int, seed: int,
              threads: int | None = None, engine: str = "auto"):
    """Payoffs, steps and termination flags of ``n`` plays, in play order."""
    sizes = [BLOCK] * (n // BLOCK) + ([n % BLOCK] if n % BLOCK else [])
    work = lambda b: simulate_block(config, S_I, S_II, seed, b, sizes[b], engine=engine)
    nt = resolve_threads(threads)
    if nt > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(nt) as ex:
            results = list(ex.map(work, range(len(sizes))))
    else:
        results = [work(b) for b in range(len(sizes))]
    return results


def estimate_value(config: GameConfig, S_I: Strategy, S_II: Strategy, n: int, seed: int = 0,
                   threads: int | None = None, engine: str = "auto") -> ValueEstimate:
    if n < 2:
        raise ValueError("estimate_value needs n >= 2")
    results = run_plays(config, S_I, S_II, n, seed, threads, engine)
    pay = np.concatenate([r.payoff for r in results])
    steps = np.concatenate([r.steps for r in results])
    term = np.concatenate([r.terminated for r in results])
    flags = set().union(*(r.flags for r in results))
    return ValueEstimate(
        mean=float(pay.mean()),
        std_error=float(pay.std(ddof=1) / math.sqrt(n)),
        n_plays=n,
        cap_hit_fraction=float(1.0 - term.mean()),
        fingerprint=fingerprint(config, S_I, S_II),
        seed=seed,
        mean_steps=float(steps.mean()),
        fallback_moves=sum(r.fallback_moves for r in results),
        flags=tuple(sorted(flags)),
    )


# ---------------------------------------------------------------------------
# tables


@dataclass
class Table:
    rows: list
    meta: dict = field(default_factory=dict)

    def columns(self) -> list:
        cols: list = []
        for r in self.rows:
            cols += [k for k in r if k not in cols]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns(), lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"meta": self.meta, "rows": self.rows}, fh, indent=2, default=_jsonable)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return str(v)


def loglog_slope(x, y, weights=None) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` and its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    w = np.ones_like(lx) if weights is None else np.asarray(weights, float)
    X = np.column_stack([np.ones_like(lx), lx])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ ly
    resid = ly - X @ beta
    dof = max(len(lx) - 2, 1)
    s2 = float(resid @ W @ resid) / dof if weights is None else 1.0
    return float(beta[1]), float(math.sqrt(s2 * cov[1, 1]))


def convergence_sweep(config: GameConfig, eps_list: Sequence[float], S_I: Strategy, S_II: Strategy,
                      reference: Callable, n: int, seed: int = 0, threads: int | None = None) -> Table:
    """Estimate at ``x0`` for each ``eps``; rows carry the error against ``reference(x0)``.

    ``meta["slope"]`` is the fitted slope of log error against log eps.
    """
    ref = float(np.asarray(reference(config.x0[None, :])).ravel()[0])
    rows = []
    for eps in eps_list:
        cfg = config.with_eps(float(eps))
        est = estimate_value(cfg, S_I, S_II, n, seed, threads)
        rows.append({
            "eps": float(eps), "mean": est.mean, "std_error": est.std_error, "reference": ref,
            "error": abs(est.mean - ref), "cap_hit_fraction": est.cap_hit_fraction,
            "mean_steps": est.mean_steps, "fingerprint": est.fingerprint, "seed": seed,
        })
    errs = [r["error"] for r in rows]
    meta = {"reference_value": ref, "n": n}
    if len(rows) >= 2 and all(e > 0 for e in errs):
        slope, se = loglog_slope([r["eps"] for r in rows], errs)
        meta.update(slope=slope, slope_stderr=se)
        meta["halving_ratios"] = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    return Table(rows, meta)


# ---------------------------------------------------------------------------
# regularity probe


@dataclass
class ProbeResult:
    theta: float
    by_adversary: dict
    std_errors: dict
    x0: list
    eps: float
    worst: str


def local_domain(domain: Domain, y, delta: float) -> Domain:
    """``domain`` intersected with the ball ``B(y, delta)``."""
    y = np.asarray(y, dtype=float)
    if isinstance(domain, PuncturedBall) and domain.core == 0 and np.allclose(y, domain.center) \
            and delta < domain.radius:
        return PuncturedBall(y, delta)
    return Intersection(domain, Ball(y, delta))


def probe_panel(y, x0, delta: float) -> dict:
    """Adversaries for player II: push away from ``y``, pull to the far sphere point, random."""
    y = np.asarray(y, float)
    out = np.asarray(x0, float) - y
    far = y + delta * out / np.linalg.norm(out)
    return {
        "gradient_away": GradientStrategy(grad=RadialField(y, 1.0)),
        "pull_far": PullToward(far),
        "random": UniformRandom(),
    }


def regularity_probe(domain: Domain, y, delta: float, eps: float, n: int, seed: int = 0, p: float = 2.0,
                     noise=None, x0=None, panel: dict | None = None, threads: int | None = None) -> ProbeResult:
    """Success probability of player I pulling toward ``y`` in ``domain`` intersected with ``B(y, delta)``.

    Success means ending on the part of the boundary inside the open ball.
    Returns the minimum over the adversary panel.
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[0]
    local = local_domain(domain, y, delta)
    if x0 is None:
        e = np.zeros(d)
        e[0] = delta / 4
        x0 = y + e if local.contains(y + e) else y - e
    x0 = np.asarray(x0, dtype=float)
    mu = measure_for_p(p, d) if noise is None else noise
    tol = 1e-9 * delta
    F = indicator_function(lambda Y: np.linalg.norm(Y - y, axis=1) < delta - tol, "inside_ball")
    cfg = GameConfig(local, mu, eps, F, x0)
    panel = probe_panel(y, x0, delta) if panel is None else panel
    S_I = PullToward(y)
    means, ses = {}, {}
    for name, S_II in panel.items():
        est = estimate_value(cfg, S_I, S_II, n, seed, threads)
        means[name], ses[name] = est.mean, est.std_error
    worst = min(means, key=means.get)
    return ProbeResult(means[worst], means, ses, x0.tolist(), eps, worst)


# ---------------------------------------------------------------------------
# porous boundary sets


@dataclass(frozen=True)
class CantorSpec:
    """Middle-fraction Cantor set on the arc ``[start, stop]`` of the unit circle (angles)."""

    start: float = 0.0
    stop: float = math.pi / 2
    ratio: float = 1.0 / 3.0
    depth: int = 12

    @property
    def porosity(self) -> float:
        # every arc of length r centred on the set contains a gap of length ~ ratio * r / 2
        return self.ratio / 2.0

    def intervals(self, depth: int | None = None) -> np.ndarray:
        depth = self.depth if depth is None else depth
        iv = np.array([[self.start, self.stop]])
        keep = (1.0 - self.ratio) / 2.0
        for _ in range(depth):
            length = iv[:, 1] - iv[:, 0]
            left = np.column_stack([iv[:, 0], iv[:, 0] + keep * length])
            right = np.column_stack([iv[:, 1] - keep * length, iv[:, 1]])
            iv = np.vstack([left, right])
            iv = iv[np.argsort(iv[:, 0])]
        return iv

    def neighborhood(self, delta: float) -> np.ndarray:
        """Arcs (as merged angle intervals) within arc distance ``delta`` of the set."""
        iv = self.intervals()
        iv = np.column_stack([iv[:, 0] - delta, iv[:, 1] + delta])
        merged = [list(iv[0])]
        for a, b in iv[1:]:
            if a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return np.array(merged)


def arc_indicator(arcs: np.ndarray, tol: float = 1e-9):
    """Indicator on the unit circle of a union of angle intervals."""
    def fn(Y):
        th = np.arctan2(Y[:, 1], Y[:, 0])[:, None]
        mid = 0.5 * (arcs[:, 0] + arcs[:, 1])
        t = th - mid
        t = t - 2 * np.pi * np.floor((t + np.pi) / (2 * np.pi)) + mid
        return np.any((t >= arcs[:, 0] - tol) & (t <= arcs[:, 1] + tol), axis=1)
    return indicator_function(fn, "arc_set")


def porous_panel(arcs: np.ndarray) -> dict:
    mid = 0.5 * (arcs[0, 0] + arcs[-1, 1])
    centre = np.array([math.cos(mid), math.sin(mid)])
    return {
        "harmonic_descent": GradientStrategy(grad=ArcHarmonicField(arcs), sign=-1.0),
        "push_from_set": GradientStrategy(grad=RadialField(centre, 1.0)),
        "pull_opposite": PullToward(-centre),
        "random": UniformRandom(),
    }


def default_eps_rule(delta: float) -> AdaptiveStep:
    return AdaptiveStep(eps_min=delta / 20, eps_max=0.05, kappa=10.0)


def porous_measure_decay(spec: CantorSpec, p: float, eps_rule: Callable[[float], AdaptiveStep] | None,
                         delta_list: Sequence[float], n: int, seed: int = 0, threads: int | None = None,
                         panel: Callable[[np.ndarray], dict] | None = None, bootstrap: int = 4000) -> Table:
    """Value at the centre of the unit disc with ``F`` the indicator of the ``delta``-neighbourhood.

    Player I ascends the harmonic measure of the neighbourhood; player II
    takes the best of a panel.  ``meta`` holds the fitted exponent of
    ``estimate ~ delta**c`` with a parametric-bootstrap 95% interval.
    """
    eps_rule = default_eps_rule if eps_rule is None else eps_rule
    panel = porous_panel if panel is None else panel
    mu = measure_for_p(p, 2)
    dom = Ball(np.zeros(2), 1.0)
    rows = []
    for delta in delta_list:
        arcs = spec.neighborhood(delta)
        rule = eps_rule(delta)
        cfg = GameConfig(dom, mu, rule.eps_max, arc_indicator(arcs), np.zeros(2), step_rule=rule)
        S_I = GradientStrategy(grad=ArcHarmonicField(arcs))
        best = None
        per = {}
        for name, S_II in panel(arcs).items():
            est = estimate_value(cfg, S_I, S_II, n, seed, threads)
            per[name] = est.mean
            if best is None or est.mean < best[1].mean:
                best = (name, est)
        name, est = best
        rows.append({
            "delta": float(delta), "estimate": est.mean, "std_error": est.std_error, "adversary": name,
            "arc_measure": float(np.sum(arcs[:, 1] - arcs[:, 0])),
            "harmonic_measure": float(ArcHarmonicField(arcs).value(np.zeros(2))[0]), "cap_hit_fraction": est.cap_hit_fraction,
            "mean_steps": est.mean_steps, "fingerprint": est.fingerprint, "seed": seed,
            **{f"mean_{k}": v for k, v in per.items()},
        })
    est = np.array([r["estimate"] for r in rows])
    se = np.array([r["std_error"] for r in rows])
    deltas = np.array([r["delta"] for r in rows])
    meta = {"p": p, "n": n, "decreasing": bool(np.all(np.diff(est) < 0)) if len(rows) > 1 else True}
    if len(rows) >= 2 and np.all(est > 0):
        c_hat, _ = loglog_slope(deltas, est)
        rng = np.random.default_rng(seed)
        draws = rng.normal(est, se, size=(bootstrap, len(est)))
        draws = np.maximum(draws, 1e-12)
        lx = np.log(deltas)
        xc = lx - lx.mean()
        slopes = (np.log(draws) - np.log(draws).mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
        lo, hi = np.quantile(slopes, [0.025, 0.975])
        meta.update(c_hat=c_hat, c_ci95=[float(lo), float(hi)])
    return Table(rows, meta)
