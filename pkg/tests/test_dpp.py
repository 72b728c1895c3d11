import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import RegularGridInterpolator

from noisytug.dpp import BellmanProblem, solve_dpp
from noisytug.geometry import Ball, Box, constant_function, direction_set, linear_function
from noisytug.noise import NoiseMeasureError, atom_offsets, measure_for_p, two_point, uniform_sphere_orthogonal

DISC = Ball(np.zeros(2), 1.0)
EPS = 0.2


@pytest.fixture(scope="module")
def small():
    return BellmanProblem(DISC, linear_function([1.0, 0.5]), two_point(), EPS, n_dir=24)


@pytest.fixture(scope="module")
def small_alt():
    return BellmanProblem(DISC, linear_function([1.0, 0.5]), measure_for_p(2.0, 2, "alternating"), EPS,
                          variant="alternating", n_dir=24)


def test_constant_boundary_gives_constant_field():
    f = solve_dpp(DISC, constant_function(4.0), two_point(), EPS, n_dir=24, max_iter=1)
    live = (f.interior | f.band).ravel()
    np.testing.assert_allclose(f.values.ravel()[live], 4.0, atol=1e-12)
    assert f.iterations == 1


def test_value_stays_within_boundary_range():
    F = linear_function([1.0, -2.0])
    f = solve_dpp(DISC, F, two_point(), EPS, n_dir=24)
    lo, hi = f.f_range
    live = (f.interior | f.band).ravel()
    assert f.converged
    assert np.all(f.values.ravel()[live] >= lo - 1e-9)
    assert np.all(f.values.ravel()[live] <= hi + 1e-9)


def test_linear_data_gives_nearly_linear_value():
    # affine functions are fixed by the interior operator; only band exits perturb them
    F = linear_function([1.0, 0.0])
    f = solve_dpp(DISC, F, two_point(), 0.1, n_dir=32)
    x = np.array([[0.3, 0.2], [-0.4, 0.1], [0.0, -0.5]])
    assert np.max(np.abs(f.value_at(x) - x[:, 0])) <= 2 * 0.1


def test_operator_matches_pointwise_interpolation(small):
    """Shifted-stencil sweep against a direct per-node evaluation."""
    rng = np.random.default_rng(0)
    u = small.initial() + 0.1 * rng.normal(size=int(np.prod(small.shape)))
    u[small.fixed] = small.initial()[small.fixed]
    axes = [small.origin[i] + small.h * np.arange(n) for i, n in enumerate(small.shape)]
    interp = RegularGridInterpolator(axes, u.reshape(small.shape))
    nodes = small._nodes()[small.idx]
    sample = rng.choice(len(nodes), 60, replace=False)
    dirs = np.vstack([direction_set(2, 24) * EPS, np.zeros((1, 2))])
    Tu = small.T(u)
    for k in sample:
        x = nodes[k]
        vals = []
        for v in dirs:
            pts, wts = atom_offsets(two_point(), v)
            vals.append(float(wts @ interp(x + v + pts)))
        assert Tu[small.idx[k]] == pytest.approx(0.5 * max(vals) + 0.5 * min(vals), abs=1e-12)


def _pair(prob, rng, scale):
    base = prob.initial()
    if isinstance(base, tuple):
        return tuple(_perturb(prob, b, rng, scale) for b in base)
    return _perturb(prob, base, rng, scale)


def _perturb(prob, base, rng, scale):
    u = base + scale * rng.normal(size=base.size)
    u[prob.fixed] = base[prob.fixed]
    return u


def _flat(u):
    return np.concatenate(u) if isinstance(u, tuple) else u


@given(st.integers(0, 2**31), st.sampled_from(["random", "alternating"]))
@settings(max_examples=100, deadline=None)
def test_operator_is_monotone_and_nonexpansive(small, small_alt, seed, variant):
    prob = small if variant == "random" else small_alt
    rng = np.random.default_rng(seed)
    u = _pair(prob, rng, 0.3)
    bump = _pair(prob, rng, 0.3)
    # w >= u on interior nodes, equal on fixed nodes
    if isinstance(u, tuple):
        w = tuple(a + np.where(prob.fixed, 0.0, np.abs(b - a)) for a, b in zip(u, bump))
    else:
        w = u + np.where(prob.fixed, 0.0, np.abs(bump - u))
    Tu, Tw = _flat(prob.T(u)), _flat(prob.T(w))
    assert np.all(Tw >= Tu - 1e-12)
    v = _pair(prob, rng, 0.3)
    Tv = _flat(prob.T(v))
    assert np.max(np.abs(Tu - Tv)) <= np.max(np.abs(_flat(u) - _flat(v))) + 1e-12


def test_alternating_solution_is_consistent():
    F = linear_function([1.0, 0.0])
    f = solve_dpp(DISC, F, measure_for_p(2.0, 2, "alternating"), EPS, variant="alternating", n_dir=24)
    assert f.converged and f.second is not None
    # with linear data both fields sit near the same affine function
    x = np.array([[0.2, 0.1]])
    assert abs(f.value_at(x) - 0.2) <= 2 * EPS


def test_spencer_is_rejected():
    with pytest.raises(ValueError, match="random and alternating"):
        solve_dpp(DISC, constant_function(0.0), two_point(), EPS, variant="spencer")


def test_non_atomic_noise_is_rejected():
    with pytest.raises(NoiseMeasureError, match="oracle requires atomic noise"):
        solve_dpp(Ball(np.zeros(3), 1.0), constant_function(0.0), uniform_sphere_orthogonal(3, 1.0), EPS)


def test_grid_must_resolve_the_step():
    with pytest.raises(ValueError, match="eps/8"):
        solve_dpp(DISC, constant_function(0.0), two_point(), EPS, h_grid=EPS / 4)


def test_acceleration_does_not_change_the_answer():
    F = linear_function([0.0, 1.0])
    a = solve_dpp(Box(np.zeros(2), np.ones(2)), F, two_point(), 0.25, n_dir=16)
    b = solve_dpp(Box(np.zeros(2), np.ones(2)), F, two_point(), 0.25, n_dir=16, accelerate=False, max_iter=20000)
    assert a.converged and b.converged
    live = (a.interior | a.band).ravel()
    tol = 20 * a.stats["tol"]
    np.testing.assert_allclose(a.values.ravel()[live], b.values.ravel()[live], atol=tol)


def test_grid_error_estimate_brackets_refinement():
    F = linear_function([1.0, 1.0])
    x0 = np.array([0.2, 0.1])
    f = solve_dpp(DISC, F, two_point(), EPS, n_dir=24, x0=x0, estimate_grid_error=True)
    fine = solve_dpp(DISC, F, two_point(), EPS, n_dir=24, h_grid=EPS / 16)
    assert f.grid_error is not None
    assert abs(f.value_at(x0) - fine.value_at(x0)) <= max(2 * f.grid_error, 1e-4)
    with pytest.raises(ValueError):
        solve_dpp(DISC, F, two_point(), EPS, estimate_grid_error=True)


def test_exports(tmp_path):
    f = solve_dpp(DISC, linear_function([1.0, 0.0]), two_point(), EPS, n_dir=24)
    csv = tmp_path / "field.csv"
    f.to_csv(csv)
    data = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert open(csv).readline().strip() == "x,y,value"
    assert data.shape[0] == int((f.interior | f.band).sum())
    assert np.all(np.linalg.norm(data[:, :2], axis=1) < 1.0)
    binp = tmp_path / "field.bin"
    f.to_binary(binp)
    head = json.loads((tmp_path / "field.bin.json").read_text())
    grid = np.fromfile(binp, dtype=head["dtype"]).reshape(head["shape"])
    np.testing.assert_array_equal(grid, f.values.reshape(f.shape))
    assert head["spacing"] == f.spacing and head["origin"] == f.origin.tolist()
