import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisytug.calculus import QuadraticModel, one_step_bound
from noisytug.engine import (
    ALTERNATING_TURN,
    PLAYER_I,
    PLAYER_II,
    SPENCER,
    SPENCER_PHASE,
    AdaptiveStep,
    GameAbort,
    GameConfig,
    ShrinkSchedule,
    dump_history,
    play,
    play_shrinking,
    simulate_block,
    turn_order,
)
from noisytug.geometry import Annulus, Ball, PuncturedBall, constant_function, linear_function
from noisytug.noise import derive_constants, measure_for_p, point_mass, two_point, uniform_sphere_orthogonal
from noisytug.strategy import (
    ConstantField,
    GradientStrategy,
    HistoryStrategy,
    PullToward,
    RadialField,
    SpencerSign,
    StandStill,
    Strategy,
    UniformRandom,
)

DISC = Ball(np.zeros(2), 1.0)
UP = GradientStrategy(grad=ConstantField([1.0, 0.0]))
DOWN = GradientStrategy(grad=ConstantField([1.0, 0.0]), sign=-1.0)


def cfg(**kw):
    base = dict(domain=DISC, noise=two_point(), eps=0.05, F=linear_function([1.0, 0.0]), x0=np.array([0.3, 0.2]))
    base.update(kw)
    return GameConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(eps=0.0)
    with pytest.raises(ValueError):
        cfg(step_cap=0)
    with pytest.raises(ValueError):
        cfg(variant="spencer", p_interp=0.5)
    with pytest.raises(ValueError):
        cfg(x0=np.zeros(3))
    with pytest.raises(ValueError):
        cfg(variant="sideways")


def test_default_step_cap():
    c = cfg(eps=0.02)
    assert c.resolved_step_cap() == math.ceil(50 * c.domain.diameter**2 / 0.02**2)


@pytest.mark.parametrize("engine", ["array", "auto"])
def test_constant_payoff(engine):
    c = cfg(F=constant_function(7.0))
    res = simulate_block(c, UniformRandom(), UniformRandom(), 3, 0, 500, engine=engine)
    assert np.all(res.terminated)
    assert np.all(res.payoff == 7.0)


def test_start_inside_band_terminates_at_once():
    c = cfg(x0=np.array([0.95, 0.0]))
    out = play(c, UP, DOWN, seed=0)
    assert out.steps == 1 and out.terminated
    assert np.linalg.norm(out.terminal_point - c.x0) <= c.alpha * c.eps
    np.testing.assert_allclose(out.terminal_point, [1.0, 0.0])


def test_terminal_point_on_boundary():
    res = simulate_block(cfg(), UP, DOWN, 1, 0, 300, engine="array")
    assert np.all(np.abs(np.linalg.norm(res.terminal, axis=1) - 1) < 1e-12)


@pytest.mark.parametrize("engine", ["array", "compiled"])
def test_harmonic_linear_value(engine):
    c = cfg(eps=0.02)
    res = simulate_block(c, UP, DOWN, 11, 0, 100_000 if engine == "compiled" else 20_000, engine=engine)
    se = res.payoff.std() / math.sqrt(res.payoff.size)
    # projecting from the band onto the circle scales y by 1/|x|, an O(eps) bias
    assert abs(res.payoff.mean() - 0.3) <= 4 * se + c.eps


@pytest.mark.parametrize("engine", ["array", "auto"])
def test_bit_identical_replay(engine):
    c = cfg(noise=measure_for_p(3.0, 2))
    a = simulate_block(c, UP, UniformRandom(), 5, 2, 400, engine=engine)
    b = simulate_block(c, UP, UniformRandom(), 5, 2, 400, engine=engine)
    assert a.payoff.tobytes() == b.payoff.tobytes()
    assert a.steps.tobytes() == b.steps.tobytes()
    assert np.array_equal(a.terminal, b.terminal, equal_nan=True)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["random", "alternating", "spencer"]))
@settings(max_examples=120, deadline=None)
def test_determinism_property(seed, variant):
    c = cfg(variant=variant, p_interp=3.0, noise=measure_for_p(2.5, 2), eps=0.1)
    S_I = SpencerSign(grad=ConstantField([1.0, 0.0]))
    a = play(c, S_I, UniformRandom(), seed)
    b = play(c, S_I, UniformRandom(), seed)
    assert a.payoff == b.payoff and a.steps == b.steps
    assert json.dumps(a.history) == json.dumps(b.history)


@given(st.integers(0, 10**6), st.sampled_from(["two_point", "sphere3", "alt"]))
@settings(max_examples=100, deadline=None)
def test_displacement_bound(seed, which):
    if which == "sphere3":
        c = GameConfig(Ball(np.zeros(3), 1.0), uniform_sphere_orthogonal(3, 0.9), 0.08, linear_function([1, 0, 0]),
                       np.array([0.1, 0.2, -0.1]))
    elif which == "alt":
        c = cfg(noise=measure_for_p(3.0, 2, "alternating"), variant=ALTERNATING_TURN, eps=0.08)
    else:
        c = cfg(eps=0.08)
    up = GradientStrategy(grad=ConstantField(np.eye(c.domain.dimension)[0]))
    out = play(c, up, UniformRandom(), seed)
    prev = c.x0
    for row in out.history:
        x = np.array(row["x"])
        assert np.linalg.norm(x - prev) <= c.alpha * c.eps * (1 + 1e-12)
        prev = x


class TooLong(Strategy):
    def moves(self, x, eps, rng):
        v = np.zeros_like(x)
        v[:, 0] = 3 * eps
        return v


class Broken(Strategy):
    def moves(self, x, eps, rng):
        return np.full_like(x, np.nan)


def test_overlong_moves_are_clamped_and_flagged():
    out = play(cfg(), TooLong(), TooLong(), 0)
    assert out.clamped_moves > 0 and "move_clamped" in out.flags
    for row in out.history[:-1]:
        assert np.linalg.norm(row["v"]) <= 0.05 * (1 + 1e-12)


def test_undefined_moves_fall_back_to_random():
    out = play(cfg(), Broken(), Broken(), 0)
    assert out.terminated and out.fallback_moves == out.steps - 1


def test_non_finite_position_aborts(monkeypatch):
    import noisytug.engine as engine

    monkeypatch.setattr(engine, "sample_noise_batch", lambda mu, v, rng: np.full_like(v, np.nan))
    with pytest.raises(GameAbort, match="non-finite"):
        play(cfg(), UP, DOWN, 0)


def test_step_cap_gives_zero_terminal_part():
    c = cfg(noise=point_mass(2), step_cap=50, F=constant_function(5.0), running_payoff=1.0)
    out = play(c, StandStill(), StandStill(), 0)
    assert not out.terminated and out.terminal_point is None
    assert out.steps == 50
    assert out.payoff == pytest.approx(50 * 0.05**2)
    assert "step_cap" in out.flags
    res = simulate_block(c, StandStill(), StandStill(), 0, 0, 10, engine="compiled")
    assert not np.any(res.terminated)
    np.testing.assert_allclose(res.payoff, 50 * 0.05**2)


def test_running_payoff_counts_terminating_turn():
    # from inside the band the game ends on turn 1 but the turn still pays f eps^2
    c = cfg(x0=np.array([0.97, 0.0]), running_payoff=2.0, F=constant_function(0.0))
    out = play(c, UP, DOWN, 0)
    assert out.steps == 1 and out.payoff == pytest.approx(2.0 * 0.05**2)
    res = simulate_block(c, UP, DOWN, 0, 0, 4, engine="compiled")
    np.testing.assert_allclose(res.payoff, 2.0 * 0.05**2)


def test_running_payoff_total_is_steps_times_f_eps2():
    c = cfg(running_payoff=3.0, F=constant_function(0.0))
    for engine in ("array", "compiled"):
        res = simulate_block(c, UP, DOWN, 4, 0, 200, engine=engine)
        np.testing.assert_allclose(res.payoff, 3.0 * 0.05**2 * res.steps, rtol=1e-12)


def test_turn_order_rules():
    rng = np.random.default_rng(0)
    assert turn_order(ALTERNATING_TURN, 1, rng)[0] == PLAYER_I
    assert turn_order(ALTERNATING_TURN, 2, rng)[0] == PLAYER_II
    movers = turn_order("random", 1, rng, 10**6)
    assert abs(np.mean(movers == PLAYER_I) - 0.5) <= 4 * 0.5 / 1000
    sp = turn_order(SPENCER, 1, rng, 10**5, p_interp=4.0)
    assert abs(np.mean(sp == SPENCER_PHASE) - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / 1e5)
    assert not np.any(turn_order(SPENCER, 1, rng, 1000, p_interp=math.inf) == SPENCER_PHASE)


def test_alternating_first_move_is_player_one():
    c = cfg(variant=ALTERNATING_TURN, noise=measure_for_p(2.0, 2, "alternating"))
    out = play(c, UP, DOWN, 0)
    movers = [r["mover"] for r in out.history]
    assert movers[:4] == ["I", "II", "I", "II"]


def test_spencer_phase_moves_have_length_eps_and_no_noise():
    c = cfg(variant=SPENCER, p_interp=1.0, eps=0.05)
    out = play(c, SpencerSign(grad=ConstantField([1.0, 0.0])), UniformRandom(), 3)
    for r in out.history[:-1]:
        assert r["mover"] == "spencer"
        assert np.linalg.norm(r["v"]) == pytest.approx(0.05)
        assert r["v"][0] >= 0  # player I always flips toward +e1
        assert r["z"] == [0.0, 0.0]


def test_spencer_at_infinite_p_matches_noiseless_random_turn_exactly():
    # with p_interp = inf the phase coin never fires and both runs share every stream
    mu0 = point_mass(2)
    a = simulate_block(cfg(noise=mu0, variant=SPENCER, p_interp=math.inf), UP, UniformRandom(), 9, 0, 500, engine="array")
    b = simulate_block(cfg(noise=mu0), UP, UniformRandom(), 9, 0, 500, engine="array")
    np.testing.assert_array_equal(a.steps, b.steps)
    np.testing.assert_array_equal(a.payoff, b.payoff)


def test_history_strategy_sees_its_history():
    seen = []

    def fn(h, eps):
        seen.append(len(h.positions))
        return np.array([eps, 0.0])

    play(cfg(), HistoryStrategy(fn), HistoryStrategy(fn), 0)
    assert seen == sorted(seen) and seen[0] == 1


def test_greedy_exit_for_player_one():
    c = GameConfig(Annulus(np.zeros(2), 1.0, 2.0), two_point(), 0.05, linear_function([-1.0, 0.0]),
                   np.array([1.05, 0.0]))
    S = GradientStrategy(grad=ConstantField([1.0, 0.0]), exit="greedy")
    res = simulate_block(c, S, S, 0, 0, 50, engine="array")
    # every exit lies within alpha eps and raises -y1 above the nearest-point value
    assert np.all(np.linalg.norm(res.terminal - c.x0, axis=1) <= c.alpha * c.eps + 1e-12)


def test_adaptive_step_is_clipped():
    rule = AdaptiveStep(0.001, 0.05, 10.0)
    np.testing.assert_allclose(rule(np.array([0.0, 0.1, 5.0])), [0.001, 0.01, 0.05])


def test_shrinking_constant_payoff_and_containment():
    c = cfg(F=constant_function(2.5), shrink=ShrinkSchedule(0.1), step_cap=400)
    out = play_shrinking(c, UniformRandom(), UniformRandom(), 0, record=True)
    assert out.payoff == 2.5
    xs = np.array([r["x"] for r in out.history])
    assert np.all(DISC.contains(xs))


def test_shrinking_requires_schedule():
    with pytest.raises(ValueError):
        play_shrinking(cfg(), UP, DOWN)
    with pytest.raises(ValueError):
        play(cfg(shrink=ShrinkSchedule(0.1)), UP, DOWN)


def test_shrinking_linear_value():
    c = cfg(shrink=ShrinkSchedule(0.1), step_cap=2000)
    res = simulate_block(c, UP, DOWN, 2, 0, 3000)
    se = res.payoff.std() / math.sqrt(res.payoff.size)
    assert abs(res.payoff.mean() - 0.3) <= 4 * se


def test_history_dump(tmp_path):
    out = play(cfg(), UP, DOWN, 1)
    path = tmp_path / "trace.jsonl"
    dump_history(out, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == out.steps
    assert set(rows[0]) == {"step", "mover", "v", "z", "x"}
    with pytest.raises(ValueError):
        dump_history(play(cfg(), UP, DOWN, 1, record=False), path)


def test_compiled_and_array_engines_agree_in_distribution():
    c = GameConfig(PuncturedBall(np.zeros(2), 1.0), measure_for_p(3.0, 2), 0.05,
                   linear_function([0.0, 1.0]), np.array([0.2, 0.1]))
    S_I, S_II = PullToward(np.zeros(2)), GradientStrategy(grad=RadialField(np.zeros(2)))
    a = simulate_block(c, S_I, S_II, 0, 0, 20000, engine="array")
    b = simulate_block(c, S_I, S_II, 0, 0, 20000, engine="compiled")
    for stat in (lambda r: r.payoff, lambda r: r.steps.astype(float)):
        xa, xb = stat(a), stat(b)
        se = math.sqrt(xa.var() / xa.size + xb.var() / xb.size)
        assert abs(xa.mean() - xb.mean()) <= 4 * se


def test_supermartingale_drift_under_player_two_gradient():
    """u(x_k) + running - c k eps^3 has nonpositive drift when II follows grad u."""
    u = lambda x: -np.sum(x**2, axis=1)  # p = 2: game Laplacian -2, so f = 2
    c = GameConfig(Annulus(np.zeros(2), 1.0, 2.0), two_point(), 0.05, lambda y: u(y), np.array([1.5, 0.0]),
                   running_payoff=2.0)
    m = QuadraticModel(-np.eye(2), np.array([-3.0, 0.0]))
    M = one_step_bound(m, 0.05, derive_constants(two_point())).M
    S_II = GradientStrategy(grad=RadialField(np.zeros(2), -1.0), sign=-1.0)
    for S_I in (UniformRandom(), PullToward(np.zeros(2)), GradientStrategy(grad=RadialField(np.zeros(2), -1.0))):
        res = simulate_block(c, S_I, S_II, 6, 0, 20000, engine="array", record=False)
        final = res.payoff - M * 0.05**3 * res.steps
        se = final.std() / math.sqrt(final.size)
        assert final.mean() - float(u(c.x0[None])[0]) <= 4 * se
