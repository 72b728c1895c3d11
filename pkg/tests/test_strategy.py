import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisytug import _kernel as K
from noisytug.calculus import radial_reference, radial_reference_gradient
from noisytug.strategy import (
    ArcHarmonicField,
    ArcSetPull,
    ConstantField,
    GradientStrategy,
    History,
    HistoryStrategy,
    PullToward,
    RadialField,
    StandStill,
    UniformRandom,
    gradient_strategy,
    pull_toward,
    radial_reference_strategy,
    spencer_sign,
)

RNG = np.random.default_rng(0)
points2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)


def hist(x):
    return History(positions=[np.asarray(x, float)])


def test_gradient_of_linear_function():
    s = gradient_strategy(lambda y: y[:, 0])
    np.testing.assert_allclose(s.move(hist([0.3, -0.2]), 0.05), [0.05, 0.0], atol=1e-9)
    s2 = gradient_strategy(lambda y: y[:, 0], maximize=False)
    np.testing.assert_allclose(s2.move(hist([0.3, -0.2]), 0.05), [-0.05, 0.0], atol=1e-9)


def test_gradient_of_radial_reference_p3():
    s = gradient_strategy(lambda y: radial_reference(2, 3.0, y))
    np.testing.assert_allclose(s.move(hist([2.0, 0.0]), 0.01), [0.01, 0.0], atol=1e-9)
    # closed-form gradient and the radial field agree in direction
    rs = radial_reference_strategy(2, 3.0)
    np.testing.assert_allclose(rs.move(hist([2.0, 0.0]), 0.01), [0.01, 0.0], atol=1e-15)


def test_gradient_of_log():
    s = radial_reference_strategy(2, 2.0)
    np.testing.assert_allclose(s.move(hist([0.0, 1.0]), 0.02), [0.0, 0.02], atol=1e-15)


def test_radial_reference_strategy_follows_gradient_sign():
    # for p < d the exponent is negative, so the reference decreases outward
    x = np.array([[0.6, -0.8]])
    for d, p in ((2, 1.5), (2, 2.0), (2, 3.0), (3, 2.0)):
        xd = np.resize(x, (1, d)) if d == 2 else np.array([[0.6, -0.8, 0.3]])
        g = radial_reference_gradient(d, p, xd[0])
        v = radial_reference_strategy(d, p).moves(xd, 0.1, RNG)[0]
        np.testing.assert_allclose(v, 0.1 * g / np.linalg.norm(g), atol=1e-14)


def test_vanishing_gradient_marks_move_undefined():
    s = GradientStrategy(grad=RadialField(np.zeros(2)))
    v = s.moves(np.zeros((1, 2)), 0.1, RNG)
    assert np.all(np.isnan(v))


def test_pull_toward_examples():
    s = pull_toward(np.zeros(2))
    np.testing.assert_allclose(s.move(hist([1.0, 0.0]), 0.1), [-0.1, 0.0], atol=1e-15)
    np.testing.assert_allclose(s.move(hist([0.03, 0.04]), 0.1), [-0.03, -0.04], atol=1e-15)


@given(points2, points2, st.floats(1e-4, 1.0), st.sampled_from([1.0, -1.0]))
@settings(max_examples=200, deadline=None)
def test_moves_never_exceed_eps(x, z, eps, sign):
    x2 = x[None, :]
    for s in (PullToward(z, sign), GradientStrategy(grad=RadialField(z, sign)), GradientStrategy(grad=ConstantField([1, 2])),
              UniformRandom(), StandStill()):
        v = s.moves(x2, eps, np.random.default_rng(1))
        if np.all(np.isfinite(v)):
            assert np.linalg.norm(v) <= eps * (1 + 1e-12)


@given(points2, points2, points2, st.floats(1e-3, 0.5))
@settings(max_examples=150, deadline=None)
def test_translation_equivariance(x, z, shift, eps):
    a = PullToward(z).moves(x[None], eps, RNG)
    b = PullToward(z + shift).moves((x + shift)[None], eps, RNG)
    np.testing.assert_allclose(a, b, atol=1e-9)
    g1 = GradientStrategy(grad=RadialField(z)).moves(x[None], eps, RNG)
    g2 = GradientStrategy(grad=RadialField(z + shift)).moves((x + shift)[None], eps, RNG)
    np.testing.assert_allclose(g1, g2, atol=1e-9)


def test_spencer_sign_rule():
    s = spencer_sign(lambda y: y[:, 0])
    h = hist([0.2, 0.1])
    assert s.choose(h, [1.0, 0.0]) == 1
    assert s.choose(h, [-1.0, 0.0]) == -1
    assert s.choose(h, [0.0, 1.0]) == 1


def test_history_strategy_is_per_play():
    s = HistoryStrategy(lambda h, eps: np.array([eps * (-1) ** h.step, 0.0]))
    assert not s.markov
    np.testing.assert_allclose(s.move(hist([0, 0]), 0.1), [0.1, 0.0])


def test_arc_harmonic_field_value_and_gradient():
    # harmonic measure of a half circle seen from the centre is 1/2
    f = ArcHarmonicField(np.array([[0.0, math.pi]]))
    assert f.value(np.zeros((1, 2)))[0] == pytest.approx(0.5, abs=1e-14)
    # gradient against central differences of the value
    x = np.array([[0.2, -0.3]])
    h = 1e-6
    fd = np.array([(f.value(x + h * e) - f.value(x - h * e))[0] / (2 * h) for e in np.eye(2)])
    g = f(x)[0]
    np.testing.assert_allclose(g / np.linalg.norm(g), fd / np.linalg.norm(fd), atol=1e-6)


def test_arc_harmonic_value_matches_poisson_integral():
    arcs = np.array([[0.1, 0.5], [1.0, 1.3], [2.0, 2.2]])
    f = ArcHarmonicField(arcs)
    x = np.array([0.3, 0.4])
    th = np.linspace(0, 2 * np.pi, 400001)[:-1]
    kernel = (1 - x @ x) / (2 * np.pi * ((np.cos(th) - x[0]) ** 2 + (np.sin(th) - x[1]) ** 2))
    inside = np.zeros_like(th, dtype=bool)
    for a, b in arcs:
        inside |= (th >= a) & (th <= b)
    poisson = np.sum(kernel * inside) * (2 * np.pi / th.size)
    assert f.value(x[None])[0] == pytest.approx(poisson, abs=1e-5)


# --- the compiled kernel computes the same moves ---------------------------------


def kernel_move(strategy, x, eps):
    code, par, arcs = strategy.kernel_spec(len(x))
    v = np.zeros(len(x))
    tmp = np.zeros(len(x))
    ok = K._move(code, np.asarray(par, float), np.ascontiguousarray(arcs, dtype=float), np.asarray(x, float), eps, v,
                 tmp, np.zeros(1, dtype=np.uint64))
    return v if ok else np.full(len(x), np.nan)


ARCS = np.array([[0.05, 0.3], [0.6, 0.9], [2.5, 3.0]])


@given(points2.filter(lambda p: 0.05 < np.linalg.norm(p) < 0.95), st.floats(1e-3, 0.2))
@settings(max_examples=200, deadline=None)
def test_kernel_moves_match_array_moves(x, eps):
    panel = [
        GradientStrategy(grad=RadialField([0.1, -0.2], -1.0), sign=-1.0),
        GradientStrategy(grad=ConstantField([0.3, -1.0])),
        PullToward([0.4, 0.4]),
        PullToward([0.4, 0.4], -1.0),
        ArcSetPull(ARCS),
        GradientStrategy(grad=ArcHarmonicField(ARCS)),
        StandStill(),
    ]
    for s in panel:
        a = s.moves(x[None], eps, RNG)[0]
        b = kernel_move(s, x, eps)
        np.testing.assert_allclose(a, b, atol=1e-12, err_msg=type(s).__name__)
