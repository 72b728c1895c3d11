import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisytug.calculus import radial_reference
from noisytug.engine import GameConfig
from noisytug.estimator import (
    BLOCK,
    CantorSpec,
    arc_indicator,
    convergence_sweep,
    estimate_value,
    loglog_slope,
    porous_measure_decay,
    regularity_probe,
    resolve_threads,
)
from noisytug.geometry import Annulus, Ball, constant_function, indicator_function, linear_function
from noisytug.noise import measure_for_p, two_point
from noisytug.strategy import ArcHarmonicField, ConstantField, GradientStrategy, PullToward, UniformRandom, \
    radial_reference_strategy

DISC = Ball(np.zeros(2), 1.0)
UP = GradientStrategy(grad=ConstantField([1.0, 0.0]))
DOWN = GradientStrategy(grad=ConstantField([1.0, 0.0]), sign=-1.0)


def test_constant_payoff_has_zero_error():
    cfg = GameConfig(DISC, two_point(), 0.05, constant_function(2.5), np.array([0.1, 0.1]))
    est = estimate_value(cfg, UniformRandom(), UniformRandom(), 500, seed=1)
    assert est.mean == 2.5 and est.std_error == 0.0 and est.cap_hit_fraction == 0.0
    with pytest.raises(ValueError):
        estimate_value(cfg, UP, DOWN, 1)


def test_linear_payoff_mean():
    # exits project onto the circle, shifting the mean by about x1 * eps; x1 = 0.1 keeps that below the noise
    x0 = np.array([0.1, 0.2])
    cfg = GameConfig(DISC, two_point(), 0.02, linear_function([1.0, 0.0]), x0)
    est = estimate_value(cfg, UP, DOWN, 100_000, seed=3)
    assert abs(est.mean - x0[0]) <= 4 * est.std_error


def test_reproducible_and_thread_independent():
    cfg = GameConfig(DISC, measure_for_p(3.0, 2), 0.05, linear_function([0.0, 1.0]), np.array([0.2, 0.3]))
    n = 2 * BLOCK + 17
    a = estimate_value(cfg, UP, UniformRandom(), n, seed=5, threads=1)
    b = estimate_value(cfg, UP, UniformRandom(), n, seed=5, threads=4)
    c = estimate_value(cfg, UP, UniformRandom(), n, seed=5, threads=3)
    assert a.mean == b.mean == c.mean
    assert a.std_error == b.std_error
    assert a.fingerprint == b.fingerprint
    d = estimate_value(cfg, UP, UniformRandom(), n, seed=6, threads=1)
    assert d.mean != a.mean


def test_thread_env_override(monkeypatch):
    monkeypatch.setenv("NOISYTUG_THREADS", "3")
    assert resolve_threads(8) == 3
    monkeypatch.delenv("NOISYTUG_THREADS")
    assert resolve_threads(2) == 2
    assert resolve_threads(0) >= 1


@given(st.integers(0, 10**6), st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([2.0, 3.0]))
@settings(max_examples=12, deadline=None)
def test_mean_stays_within_payoff_range(seed, a, b, p):
    F = linear_function([a, b])
    cfg = GameConfig(DISC, measure_for_p(p, 2), 0.1, F, np.array([0.3, -0.2]))
    est = estimate_value(cfg, UniformRandom(), PullToward(np.zeros(2)), 300, seed=seed)
    bound = math.hypot(a, b)
    assert -bound - 1e-12 <= est.mean <= bound + 1e-12


def test_running_payoff_bounds():
    cfg = GameConfig(DISC, two_point(), 0.1, constant_function(0.0), np.zeros(2), running_payoff=1.0)
    est = estimate_value(cfg, UniformRandom(), UniformRandom(), 400, seed=2)
    assert est.mean >= 0.0 and est.mean == pytest.approx(0.01 * est.mean_steps)


def test_gradient_improves_on_random_for_player_one():
    dom = Annulus(np.zeros(2), 1.0, 2.0)
    F = indicator_function(lambda Y: np.linalg.norm(Y, axis=1) < 1.5, "inner")
    cfg = GameConfig(dom, measure_for_p(3.0, 2), 0.04, F, np.array([1.4, 0.0]))
    S_II = radial_reference_strategy(2, 3.0, maximize=True)
    rand = estimate_value(cfg, UniformRandom(), S_II, 20000, seed=4)
    grad = estimate_value(cfg, radial_reference_strategy(2, 3.0, maximize=False), S_II, 20000, seed=4)
    assert grad.mean >= rand.mean - 4 * math.hypot(grad.std_error, rand.std_error)


def test_linear_sweep_errors_are_noise():
    x0 = np.array([0.0, 0.2])
    cfg = GameConfig(DISC, two_point(), 0.04, linear_function([1.0, 0.0]), x0)
    tab = convergence_sweep(cfg, [0.08, 0.04], UP, DOWN, linear_function([1.0, 0.0]), 20000, seed=1)
    for row in tab.rows:
        assert row["error"] <= 4 * row["std_error"]
        assert row["reference"] == 0.0


def test_radial_sweep_has_linear_rate():
    dom = Annulus(np.zeros(2), 1.0, 2.0)
    F = lambda Y: radial_reference(2, 2.0, Y)
    cfg = GameConfig(dom, two_point(), 0.04, F, np.array([1.2, 0.0]))
    S_I = radial_reference_strategy(2, 2.0)
    S_II = radial_reference_strategy(2, 2.0, maximize=False)
    tab = convergence_sweep(cfg, [0.04, 0.02], S_I, S_II, F, 100_000, seed=2)
    assert tab.meta["reference_value"] == pytest.approx(math.log(1.2))
    assert all(r["std_error"] < 0.2 * r["error"] for r in tab.rows)
    ratio = tab.meta["halving_ratios"][0]
    assert 1.4 <= ratio <= 2.8


def test_table_outputs(tmp_path):
    cfg = GameConfig(DISC, two_point(), 0.1, linear_function([1.0, 0.0]), np.array([0.1, 0.0]))
    tab = convergence_sweep(cfg, [0.2, 0.1], UP, DOWN, linear_function([1.0, 0.0]), 200, seed=9)
    tab.to_csv(tmp_path / "t.csv")
    tab.to_json(tmp_path / "t.json")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["eps", "mean", "std_error"]
    assert len(lines) == 3
    js = json.loads((tmp_path / "t.json").read_text())
    assert all("fingerprint" in r and r["seed"] == 9 for r in js["rows"])


def test_loglog_slope_exact():
    x = np.array([0.1, 0.05, 0.025])
    s, se = loglog_slope(x, 3 * x**1.5)
    assert s == pytest.approx(1.5) and se == pytest.approx(0.0, abs=1e-10)


def test_regular_boundary_point_of_disc():
    thetas = []
    for x0 in ([0.95, 0.0], [0.96, 0.03]):
        r = regularity_probe(DISC, [1.0, 0.0], 0.2, 0.005, 1500, seed=3, x0=x0)
        thetas.append(r.theta)
        assert set(r.by_adversary) == {"gradient_away", "pull_far", "random"}
    assert min(thetas) >= 0.5


def test_cantor_intervals():
    spec = CantorSpec(0.0, 1.0, 1 / 3, 3)
    iv = spec.intervals()
    assert iv.shape == (8, 2)
    np.testing.assert_allclose(iv[:, 1] - iv[:, 0], 1 / 27)
    np.testing.assert_allclose(iv[0], [0.0, 1 / 27])
    np.testing.assert_allclose(iv[-1], [26 / 27, 1.0])


def test_cantor_porosity_holds_empirically():
    """Every window of half-width r around a set point has a gap of length >= porosity * r."""
    spec = CantorSpec(0.0, 1.0, 1 / 3, 10)
    iv = spec.intervals()
    rng = np.random.default_rng(0)
    smallest = (iv[0, 1] - iv[0, 0]) * 30
    for _ in range(400):
        c = iv[rng.integers(len(iv)), 0]
        r = math.exp(rng.uniform(math.log(smallest), math.log(0.5)))
        lo, hi = c - r, c + r
        inside = iv[(iv[:, 1] > lo) & (iv[:, 0] < hi)]
        edges = np.concatenate([[lo], np.clip(inside.ravel(), lo, hi), [hi]])
        gaps = edges[1::2] - edges[0::2]
        assert gaps.max() >= spec.porosity * r - 1e-12


def test_neighbourhood_covers_set_and_merges():
    spec = CantorSpec(depth=6)
    nb = spec.neighborhood(0.05)
    assert np.all(np.diff(nb[:, 0]) > 0)
    iv = spec.intervals()
    for a, b in iv:
        assert np.any((nb[:, 0] <= a) & (nb[:, 1] >= b))
    wide = spec.neighborhood(1.0)
    assert wide.shape == (1, 2)


def test_arc_indicator_wraps_angles():
    ind = arc_indicator(np.array([[3.0, 3.5]]))
    y = np.array([[math.cos(3.2), math.sin(3.2)], [1.0, 0.0], [math.cos(-3.0), math.sin(-3.0)]])
    np.testing.assert_array_equal(ind(y), [1.0, 0.0, 1.0])


def test_porous_upper_envelope():
    # delta past the largest gap: the neighbourhood is one arc and the value is close to its harmonic measure
    spec = CantorSpec(depth=8)
    delta = 0.3
    tab = porous_measure_decay(spec, 2.0, None, [delta], 2000, seed=1)
    row = tab.rows[0]
    whole = (math.pi / 2 + 2 * delta) / (2 * math.pi)
    assert row["arc_measure"] == pytest.approx(math.pi / 2 + 2 * delta)
    assert row["harmonic_measure"] == pytest.approx(whole)
    assert abs(row["estimate"] - whole) <= 4 * row["std_error"] + 0.05


def test_harmonic_attacker_tracks_harmonic_measure():
    arcs = np.array([[0.0, 1.0]])
    f = ArcHarmonicField(arcs)
    assert f.value(np.zeros((1, 2)))[0] == pytest.approx(1 / (2 * math.pi))
