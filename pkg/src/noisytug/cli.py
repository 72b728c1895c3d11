"""Command-line experiment runner.

    noisytug list
    noisytug run <config.json | catalog-name> [--seed N] [--out DIR]

A config is one JSON object validated against the schema below; unknown keys
are rejected.  Every run writes its tables and the resolved config into the
output directory, each file via a temporary name and an atomic rename.

Exit codes: 0 success, 1 invariant violation or non-finite result,
2 unreadable or invalid config.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from .calculus import annulus_hit_prob, radial_reference
from .dpp import solve_dpp
from .engine import GameAbort, GameConfig, dump_history, play
from .estimator import CantorSpec, convergence_sweep, estimate_value, porous_measure_decay, regularity_probe
from .estimator import Table
from .engine import AdaptiveStep
from .geometry import Annulus, Ball, Box, PuncturedBall, from_callable, indicator_function, linear_function
from .noise import make_noise_measure, measure_for_p, point_mass, two_point
from .strategy import ConstantField, GradientStrategy, PullToward, RadialField, StandStill, UniformRandom
from .strategy import radial_reference_strategy

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSpec(_Model):
    kind: Literal["ball", "annulus", "punctured_ball", "box"]
    center: list[float] = [0.0, 0.0]
    radius: Optional[PositiveFloat] = None
    inner: Optional[PositiveFloat] = None
    outer: Optional[PositiveFloat] = None
    lo: Optional[list[float]] = None
    hi: Optional[list[float]] = None

    @model_validator(mode="after")
    def _complete(self):
        need = {"ball": ["radius"], "punctured_ball": ["radius"], "annulus": ["inner", "outer"], "box": ["lo", "hi"]}
        missing = [k for k in need[self.kind] if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.kind} domain needs {', '.join(missing)}")
        if self.kind == "annulus" and not self.inner < self.outer:
            raise ValueError("annulus needs inner < outer")
        return self

    def build(self):
        c = np.asarray(self.center, float)
        if self.kind == "ball":
            return Ball(c, self.radius)
        if self.kind == "annulus":
            return Annulus(c, self.inner, self.outer)
        if self.kind == "punctured_ball":
            return PuncturedBall(c, self.radius)
        return Box(np.asarray(self.lo, float), np.asarray(self.hi, float))


class NoiseSpec(_Model):
    kind: Literal["for_p", "two_point", "point", "sphere", "atoms"] = "for_p"
    p: Optional[float] = Field(default=None, ge=1.0)
    radius: Optional[float] = Field(default=None, ge=0.0)
    atoms: Optional[list[list[float]]] = None
    weights: Optional[list[float]] = None

    def build(self, d: int, p: float | None, turn_mode: str = "random"):
        if self.kind == "for_p":
            target = self.p if self.p is not None else p
            if target is None:
                raise ValueError("noise kind for_p needs p")
            return measure_for_p(target, d, turn_mode)
        if self.kind == "two_point":
            return two_point(d, 1.0 if self.radius is None else self.radius)
        if self.kind == "point":
            return point_mass(d)
        if self.kind == "sphere":
            return make_noise_measure("sphere", d, radius=1.0 if self.radius is None else self.radius)
        return make_noise_measure("atoms", d, points=self.atoms, weights=self.weights)


class StrategySpec(_Model):
    kind: Literal["reference_gradient", "linear_gradient", "radial", "pull", "random", "zero"]
    maximize: bool = True
    direction: Optional[list[float]] = None
    target: Optional[list[float]] = None
    center: Optional[list[float]] = None
    exit: Literal["nearest", "greedy"] = "nearest"

    def build(self, d: int, p: float):
        sign = 1.0 if self.maximize else -1.0
        if self.kind == "reference_gradient":
            return radial_reference_strategy(d, p, self.center, self.maximize, self.exit)
        if self.kind == "linear_gradient":
            return GradientStrategy(grad=ConstantField(self.direction or [1.0] + [0.0] * (d - 1)), sign=sign,
                                    exit=self.exit)
        if self.kind == "radial":
            return GradientStrategy(grad=RadialField(self.center or [0.0] * d), sign=sign, exit=self.exit)
        if self.kind == "pull":
            return PullToward(self.target or [0.0] * d, sign, self.exit)
        if self.kind == "random":
            return UniformRandom(self.exit)
        return StandStill()


class _Common(_Model):
    name: str
    anchor: str = ""
    description: str = ""
    seed: int = 0
    n: PositiveInt = 1000
    threads: int = Field(default=1, ge=0)
    output_dir: Optional[str] = None


EpsList = Annotated[list[PositiveFloat], Field(min_length=1)]


class ConvergenceConfig(_Common):
    kind: Literal["convergence"]
    domain: DomainSpec = DomainSpec(kind="annulus", inner=1.0, outer=2.0)
    p: float = Field(default=2.0, ge=1.0)
    variant: Literal["random", "alternating"] = "random"
    noise: NoiseSpec = NoiseSpec()
    eps_list: EpsList
    x0: list[float]
    reference: Literal["radial", "linear"] = "radial"
    linear_coef: Optional[list[float]] = None


class AnnulusConfig(_Common):
    kind: Literal["annulus"]
    s: PositiveFloat = 0.5
    t: PositiveFloat = 2.0
    r: PositiveFloat = 1.0
    p: float = Field(default=3.0, ge=1.0)
    d: int = Field(default=2, ge=2)
    eps_list: EpsList
    noise: NoiseSpec = NoiseSpec()

    @model_validator(mode="after")
    def _order(self):
        if not self.s < 1 < self.t:
            raise ValueError("annulus probe needs s < 1 < t")
        return self


class RunningPayoffConfig(_Common):
    kind: Literal["running-payoff"]
    inner: PositiveFloat = 1.0
    outer: PositiveFloat = 2.0
    eps_list: EpsList
    x0: list[float]


class RegularityConfig(_Common):
    kind: Literal["regularity"]
    domain: DomainSpec = DomainSpec(kind="punctured_ball", radius=1.0)
    y: list[float] = [0.0, 0.0]
    delta: PositiveFloat = 0.5
    p_list: list[float] = [2.0, 3.0]
    eps_list: EpsList


class PorousConfig(_Common):
    kind: Literal["porous"]
    p: float = Field(default=2.0, ge=1.0)
    arc_start: float = 0.0
    arc_stop: float = math.pi / 2
    ratio: float = Field(default=1 / 3, gt=0, lt=1)
    depth: Optional[int] = Field(default=None, ge=1)
    k_list: list[int] = [2, 3, 4, 5]
    eps_max: PositiveFloat = 0.05
    eps_fraction: PositiveFloat = 0.05
    kappa: PositiveFloat = 10.0


class DppVsMcConfig(_Common):
    kind: Literal["dpp-vs-mc"]
    radius: PositiveFloat = 1.0
    noise: NoiseSpec = NoiseSpec(kind="two_point")
    coef: list[float] = [1.0, 0.0]
    eps: PositiveFloat = 0.05
    h_grid: Optional[PositiveFloat] = None
    x0: list[float] = [0.3, 0.2]


class TrajectoryConfig(_Common):
    kind: Literal["trajectory-dump"]
    domain: DomainSpec = DomainSpec(kind="ball", radius=1.0)
    p: float = Field(default=2.0, ge=1.0)
    noise: NoiseSpec = NoiseSpec()
    eps: PositiveFloat
    x0: list[float]
    player_I: StrategySpec = StrategySpec(kind="linear_gradient")
    player_II: StrategySpec = StrategySpec(kind="linear_gradient", maximize=False)
    F_coef: list[float] = [1.0, 0.0]
    plays: PositiveInt = 1


ExperimentConfig = Annotated[
    Union[ConvergenceConfig, AnnulusConfig, RunningPayoffConfig, RegularityConfig, PorousConfig,
          DppVsMcConfig, TrajectoryConfig],
    Field(discriminator="kind"),
]


class _Root(BaseModel):
    config: ExperimentConfig


def parse_config(data: dict):
    return _Root.model_validate({"config": data}).config


# ---------------------------------------------------------------------------
# experiments


def _run_convergence(cfg: ConvergenceConfig):
    dom = cfg.domain.build()
    d = dom.dimension
    mu = cfg.noise.build(d, cfg.p, cfg.variant)
    if cfg.reference == "radial":
        ref = lambda y: radial_reference(d, cfg.p, y)
        F = from_callable(ref, "radial_reference")
        S_I = radial_reference_strategy(d, cfg.p, maximize=True)
        S_II = radial_reference_strategy(d, cfg.p, maximize=False)
    else:
        coef = np.asarray(cfg.linear_coef or [1.0] + [0.0] * (d - 1), float)
        F = linear_function(coef)
        ref = F
        S_I = GradientStrategy(grad=ConstantField(coef))
        S_II = GradientStrategy(grad=ConstantField(coef), sign=-1.0)
    game = GameConfig(dom, mu, cfg.eps_list[0], F, np.asarray(cfg.x0, float), variant=cfg.variant)
    tab = convergence_sweep(game, cfg.eps_list, S_I, S_II, ref, cfg.n, cfg.seed, cfg.threads)
    tab.meta["p_of_noise"] = game.constants.p
    return {"table": tab}


def _run_annulus(cfg: AnnulusConfig):
    d = cfg.d
    dom = Annulus(np.zeros(d), cfg.s * cfg.r, cfg.t * cfg.r)
    mu = cfg.noise.build(d, cfg.p)
    x0 = np.zeros(d)
    x0[0] = cfg.r
    F = indicator_function(lambda y: dom.on_inner(y, 1e-9), "inner_sphere")
    target = annulus_hit_prob(cfg.s, cfg.t, cfg.p, d)
    # player I wants the inner sphere, so climbs -rho; player II climbs rho
    S_I = radial_reference_strategy(d, cfg.p, maximize=False)
    S_II = radial_reference_strategy(d, cfg.p, maximize=True)
    rows = []
    for eps in cfg.eps_list:
        est = estimate_value(GameConfig(dom, mu, eps, F, x0), S_I, S_II, cfg.n, cfg.seed, cfg.threads)
        tol = max(4 * est.std_error, 0.02)
        rows.append({"eps": eps, "mean": est.mean, "std_error": est.std_error, "predicted": target,
                     "abs_diff": abs(est.mean - target), "tolerance": tol,
                     "within": bool(abs(est.mean - target) <= tol), "cap_hit_fraction": est.cap_hit_fraction,
                     "fingerprint": est.fingerprint, "seed": cfg.seed})
    return {"table": Table(rows, {"predicted": target, "p": cfg.p, "d": d})}


def _running_payoff_game(inner: float, outer: float, eps: float, x0, d: int = 2):
    dom = Annulus(np.zeros(d), inner, outer)
    u = lambda y: -np.sum(np.asarray(y) ** 2, axis=-1)
    F = from_callable(u, "minus_square_norm")
    # u = -|x|^2, p = 2, beta = 2: the p-Laplacian is -2, so f = 2
    game = GameConfig(dom, two_point(d), eps, F, np.asarray(x0, float), running_payoff=2.0)
    S_I = GradientStrategy(grad=RadialField(np.zeros(d), -1.0))
    S_II = GradientStrategy(grad=RadialField(np.zeros(d), -1.0), sign=-1.0)
    return game, S_I, S_II, u


def _run_running(cfg: RunningPayoffConfig):
    game, S_I, S_II, u = _running_payoff_game(cfg.inner, cfg.outer, cfg.eps_list[0], cfg.x0)
    tab = convergence_sweep(game, cfg.eps_list, S_I, S_II, u, cfg.n, cfg.seed, cfg.threads)
    return {"table": tab}


def _run_regularity(cfg: RegularityConfig):
    dom = cfg.domain.build()
    rows = []
    for p in cfg.p_list:
        for eps in cfg.eps_list:
            r = regularity_probe(dom, cfg.y, cfg.delta, eps, cfg.n, cfg.seed, p=p, threads=cfg.threads)
            rows.append({"p": p, "eps": eps, "theta": r.theta, "worst": r.worst,
                         "std_error": r.std_errors[r.worst],
                         **{f"mean_{k}": v for k, v in r.by_adversary.items()}, "seed": cfg.seed})
    return {"table": Table(rows, {"y": cfg.y, "delta": cfg.delta})}


def _run_porous(cfg: PorousConfig):
    deltas = [3.0 ** -k for k in cfg.k_list]
    depth = cfg.depth or (max(cfg.k_list) + 6)
    spec = CantorSpec(cfg.arc_start, cfg.arc_stop, cfg.ratio, depth)
    rule = lambda delta: AdaptiveStep(cfg.eps_fraction * delta, cfg.eps_max, cfg.kappa)
    tab = porous_measure_decay(spec, cfg.p, rule, deltas, cfg.n, cfg.seed, cfg.threads)
    for row, k in zip(tab.rows, cfg.k_list):
        row["k"] = k
    return {"table": tab}


def _run_dpp_vs_mc(cfg: DppVsMcConfig):
    d = len(cfg.x0)
    dom = Ball(np.zeros(d), cfg.radius)
    mu = cfg.noise.build(d, None)
    coef = np.asarray(cfg.coef, float)
    F = linear_function(coef)
    x0 = np.asarray(cfg.x0, float)
    field = solve_dpp(dom, F, mu, cfg.eps, h_grid=cfg.h_grid, x0=x0, estimate_grid_error=True)
    S_I = GradientStrategy(grad=ConstantField(coef), exit="greedy")
    S_II = GradientStrategy(grad=ConstantField(coef), sign=-1.0, exit="greedy")
    est = estimate_value(GameConfig(dom, mu, cfg.eps, F, x0), S_I, S_II, cfg.n, cfg.seed, cfg.threads)
    lo, hi = est.ci(0.99)
    oracle = field.value_at(x0)
    harmonic = float(coef @ x0)
    row = {"eps": cfg.eps, "oracle": oracle, "grid_error": field.grid_error, "oracle_residual": field.residual,
           "oracle_converged": field.converged, "mc_mean": est.mean, "mc_std_error": est.std_error,
           "mc_ci99_half": (hi - lo) / 2, "harmonic": harmonic,
           "agree": bool(abs(oracle - est.mean) <= (hi - lo) / 2 + field.grid_error),
           "fingerprint": est.fingerprint, "seed": cfg.seed}
    return {"table": Table([row], {}), "field": field}


def _run_trajectory(cfg: TrajectoryConfig):
    dom = cfg.domain.build()
    d = dom.dimension
    mu = cfg.noise.build(d, cfg.p)
    game = GameConfig(dom, mu, cfg.eps, linear_function(cfg.F_coef), np.asarray(cfg.x0, float))
    S_I, S_II = cfg.player_I.build(d, cfg.p), cfg.player_II.build(d, cfg.p)
    outcomes = [play(game, S_I, S_II, cfg.seed + i) for i in range(cfg.plays)]
    rows = [{"play": i, "seed": o.rng_seed, "steps": o.steps, "payoff": o.payoff, "terminated": o.terminated}
            for i, o in enumerate(outcomes)]
    return {"table": Table(rows, {}), "trajectories": outcomes}


RUNNERS = {
    "convergence": _run_convergence,
    "annulus": _run_annulus,
    "running-payoff": _run_running,
    "regularity": _run_regularity,
    "porous": _run_porous,
    "dpp-vs-mc": _run_dpp_vs_mc,
    "trajectory-dump": _run_trajectory,
}


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: Path, writer) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(table: Table) -> bool:
    for row in table.rows:
        for v in row.values():
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                return False
    return True


def _write_outputs(cfg, result: dict, out: Path) -> list[Path]:
    written = []
    resolved = cfg.model_dump(mode="json")

    def dump_json(obj):
        return lambda tmp: Path(tmp).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    target = out / "resolved_config.json"
    _atomic_write(target, dump_json(resolved))
    written.append(target)
    table: Table = result["table"]
    for suffix, meth in ((".csv", table.to_csv), (".json", table.to_json)):
        target = out / f"{cfg.name}{suffix}"
        _atomic_write(target, meth)
        written.append(target)
    if "field" in result:
        f = result["field"]
        target = out / f"{cfg.name}_field.csv"
        _atomic_write(target, f.to_csv)
        target_bin = out / f"{cfg.name}_field.bin"

        def bin_writer(tmp):
            f.to_binary(tmp)
            os.replace(tmp + ".json", str(target_bin) + ".json")

        _atomic_write(target_bin, bin_writer)
        written += [target, target_bin]
    if "trajectories" in result:
        for i, o in enumerate(result["trajectories"]):
            target = out / f"{cfg.name}_play{i}.jsonl"
            _atomic_write(target, lambda tmp, o=o: dump_history(o, tmp))
            written.append(target)
    return written


# ---------------------------------------------------------------------------
# catalog


def catalog() -> list[dict]:
    entries = []
    for item in sorted(resources.files("noisytug.catalog").iterdir(), key=lambda p: p.name):
        if item.name.endswith(".json"):
            data = json.loads(item.read_text())
            data["_file"] = item.name
            entries.append(data)
    return entries


def list_experiments(stream=None) -> list[dict]:
    stream = stream or sys.stdout
    entries = catalog()
    for e in entries:
        print(f"{e['name']:<24} {e['kind']:<16} {e['anchor']}", file=stream)
        if e.get("description"):
            print(f"{'':<24} {e['description']}", file=stream)
    return entries


def _load(ref: str) -> dict:
    path = Path(ref)
    if path.exists():
        return json.loads(path.read_text())
    for e in catalog():
        if e["name"] == ref:
            e.pop("_file")
            return e
    raise FileNotFoundError(f"no config file or catalog entry named {ref!r}")


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"] if p != "config")
        lines.append(f"  {loc or '<root>'}: {e['msg']}")
    return "config validation failed:\n" + "\n".join(lines)


def run(config_ref: str, seed: int | None = None, out: str | None = None, stream=None) -> int:
    stream = stream or sys.stderr
    try:
        data = _load(config_ref)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=stream)
        return EXIT_CONFIG
    if seed is not None and isinstance(data, dict):
        data["seed"] = seed
    try:
        cfg = parse_config(data)
    except ValidationError as exc:
        print(_format_errors(exc), file=stream)
        return EXIT_CONFIG
    env_threads = os.environ.get("NOISYTUG_THREADS")
    if env_threads is not None:
        cfg = cfg.model_copy(update={"threads": int(env_threads)})
    out_dir = Path(out or cfg.output_dir or Path("results") / cfg.name)
    try:
        result = RUNNERS[cfg.kind](cfg)
    except (GameAbort, FloatingPointError) as exc:
        print(f"invariant violation: {exc}", file=stream)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"invalid experiment: {exc}", file=stream)
        return EXIT_CONFIG
    if not _finite(result["table"]):
        print("non-finite value in results", file=stream)
        return EXIT_INVARIANT
    for path in _write_outputs(cfg, result, out_dir):
        print(path, file=sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="noisytug", description="Tug-of-war-with-noise experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="show the built-in experiment catalog")
    r = sub.add_parser("run", help="run an experiment config (path or catalog name)")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    if args.command == "list":
        list_experiments()
        return EXIT_OK
    return run(args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
