"""Compiled play loop for the common configurations.

Covers ball and spherical-shell domains, point/atomic/sphere noise, a fixed
or distance-adaptive step, a constant running payoff and the structured
strategies below.  Each play draws from its own splitmix64 stream seeded by
a ``uint64`` from ``SeedSequence``, so the result of a play depends only on
that seed.

The exit point is not chosen here: the kernel returns the position at which
the game entered the termination band and the engine maps it to the nearest
boundary point, exactly as in the array engine.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# strategy codes
ZERO, CONST, RADIAL, PULL, RANDOM, ARC, ARC_GRAD = 0, 1, 2, 3, 4, 5, 6
# domain codes
DOM_BALL, DOM_SHELL = 0, 1
# noise codes
NOISE_POINT, NOISE_ATOMS, NOISE_SPHERE = 0, 1, 2

_FLOOR = 1e-8

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, error_model="numpy", _nrt=False)
def _uniform(state):
    """splitmix64 step on ``state[0]``; returns a double in [0, 1)."""
    s = state[0] + _GOLDEN
    state[0] = s
    z = (s ^ (s >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    z = z ^ (z >> _S31)
    return float(z >> _S11) * _INV53


@njit(cache=True, error_model="numpy", _nrt=False)
def _normal(state):
    # Box-Muller, one output per call
    u1 = 1.0 - _uniform(state)
    u2 = _uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, error_model="numpy", _nrt=False)
def _dist(x, dom_code, dom):
    d = x.shape[0]
    r2 = 0.0
    for i in range(d):
        t = x[i] - dom[i]
        r2 += t * t
    r = math.sqrt(r2)
    if dom_code == DOM_BALL:
        return dom[d] - r
    return min(r - dom[d], dom[d + 1] - r)


@njit(cache=True, error_model="numpy", _nrt=False)
def _random_dir(out, eps, state):
    d = out.shape[0]
    s = 0.0
    for i in range(d):
        g = _normal(state)
        out[i] = g
        s += g * g
    s = math.sqrt(s)
    for i in range(d):
        out[i] = out[i] / s * eps


@njit(cache=True, error_model="numpy", _nrt=False)
def _arc_target(x, par, arcs, out):
    # nearest point of a union of circle arcs, by angular clamping
    cx, cy, rad = par[0], par[1], par[2]
    th = math.atan2(x[1] - cy, x[0] - cx)
    best = 1e300
    best_a = 0.0
    two_pi = 2.0 * math.pi
    for j in range(arcs.shape[0]):
        a, b = arcs[j, 0], arcs[j, 1]
        # bring th into [a - pi, a + pi) relative to the arc midpoint
        mid = 0.5 * (a + b)
        t = th - mid
        t = t - two_pi * math.floor((t + math.pi) / two_pi)
        t = t + mid
        c = min(max(t, a), b)
        gap = abs(t - c)
        if gap < best:
            best = gap
            best_a = c
    out[0] = cx + rad * math.cos(best_a)
    out[1] = cy + rad * math.sin(best_a)


@njit(cache=True, error_model="numpy", _nrt=False)
def _move(code, par, arcs, x, eps, v, tmp, state):
    """Write the move into ``v``; return False when the move is undefined."""
    d = x.shape[0]
    if code == ZERO:
        for i in range(d):
            v[i] = 0.0
        return True
    if code == CONST:
        for i in range(d):
            v[i] = eps * par[i]
        return True
    if code == RANDOM:
        _random_dir(v, eps, state)
        return True
    if code == RADIAL:
        r2 = 0.0
        for i in range(d):
            t = x[i] - par[i]
            r2 += t * t
        r = math.sqrt(r2)
        if not r > _FLOOR:
            return False
        s = par[d] * eps / r
        for i in range(d):
            v[i] = s * (x[i] - par[i])
        return True
    if code == ARC_GRAD:
        # gradient of the harmonic measure of circle arcs seen from x (unit disc)
        gx = 0.0
        gy = 0.0
        for j in range(arcs.shape[0]):
            for e in range(2):
                ang = arcs[j, e]
                X = math.cos(ang) - x[0]
                Y = math.sin(ang) - x[1]
                r2 = X * X + Y * Y
                sg = 1.0 if e == 1 else -1.0
                gx += sg * Y / r2
                gy -= sg * X / r2
        g = math.sqrt(gx * gx + gy * gy)
        if not g > _FLOOR:
            return False
        s = par[0] * eps / g
        v[0] = s * gx
        v[1] = s * gy
        return True
    if code == PULL or code == ARC:
        if code == ARC:
            _arc_target(x, par, arcs, tmp)
            sign = 1.0
        else:
            for i in range(d):
                tmp[i] = par[i]
            sign = par[d]
        r2 = 0.0
        for i in range(d):
            t = tmp[i] - x[i]
            r2 += t * t
        r = math.sqrt(r2)
        if sign < 0:
            if r == 0.0:
                return False
            for i in range(d):
                v[i] = -(tmp[i] - x[i]) * eps / r
            return True
        s = eps / r if r > eps else 1.0
        for i in range(d):
            v[i] = (tmp[i] - x[i]) * s
        return True
    return False


@njit(cache=True, error_model="numpy", _nrt=False)
def _noise(noise_code, atoms, cumw, radius, v, z, ref, state):
    d = v.shape[0]
    if noise_code == NOISE_ATOMS:
        if cumw.shape[0] == 1:
            j = 0
        else:
            u = _uniform(state) * cumw[cumw.shape[0] - 1]
            j = 0
            while j < cumw.shape[0] - 1 and cumw[j] <= u:
                j += 1
        for i in range(d):
            ref[i] = atoms[j, i]
    elif noise_code == NOISE_SPHERE:
        ref[0] = 0.0
        s = 0.0
        for i in range(1, d):
            g = _normal(state)
            ref[i] = g
            s += g * g
        s = math.sqrt(s)
        for i in range(1, d):
            ref[i] = radius * ref[i] / s if s > 0 else 0.0
    else:
        for i in range(d):
            z[i] = 0.0
        return
    nv = 0.0
    for i in range(d):
        nv += v[i] * v[i]
    nv = math.sqrt(nv)
    if nv == 0.0:
        for i in range(d):
            z[i] = 0.0
        return
    # Householder H (e1 <-> u = v/|v|) after flipping the last coordinate:
    # with w = e1 - u, |w|^2 = 2 (1 - u_1)
    inv = 1.0 / nv
    half_ww = 1.0 - v[0] * inv
    if half_ww < 1e-30:
        for i in range(d):
            z[i] = ref[i] * nv
        return
    ref[d - 1] = -ref[d - 1]
    dot = ref[0]
    for i in range(d):
        dot -= v[i] * inv * ref[i]
    coef = dot / half_ww
    z[0] = (ref[0] - coef * (1.0 - v[0] * inv)) * nv
    for i in range(1, d):
        z[i] = (ref[i] + coef * v[i] * inv) * nv


@njit(cache=True, nogil=True, error_model="numpy", _nrt=False)
def _loop(x0, seeds, dom_code, dom, noise_code, atoms, cumw, radius, alpha, eps_fixed,
          rule, cap, alternating, code1, par1, arcs1, code2, par2, arcs2, running,
          final, steps, term, run, work, state):
    n = seeds.shape[0]
    d = x0.shape[0]
    fallbacks = 0
    x, v, z, ref, tmp = work[0], work[1], work[2], work[3], work[4]
    adaptive = rule[2] > 0
    for p in range(n):
        state[0] = seeds[p]
        for i in range(d):
            x[i] = x0[i]
        k = 0
        while True:
            k += 1
            dist = _dist(x, dom_code, dom)
            if adaptive:
                eps = min(max(dist / rule[2], rule[0]), rule[1])
            else:
                eps = eps_fixed
            if alternating:
                first = (k % 2) == 1
            else:
                first = _uniform(state) < 0.5
            run[p] += running * eps * eps
            if dist <= alpha * eps:
                term[p] = True
                break
            if first:
                ok = _move(code1, par1, arcs1, x, eps, v, tmp, state)
            else:
                ok = _move(code2, par2, arcs2, x, eps, v, tmp, state)
            if not ok:
                fallbacks += 1
                _random_dir(v, eps, state)
            _noise(noise_code, atoms, cumw, radius, v, z, ref, state)
            for i in range(d):
                x[i] = x[i] + v[i] + z[i]
            if k >= cap:
                break
        steps[p] = k
        for i in range(d):
            final[p, i] = x[i]
    return fallbacks


@njit(cache=True, nogil=True)
def run_plays(x0, seeds, dom_code, dom, noise_code, atoms, cumw, radius, alpha, eps_fixed,
              rule, cap, alternating, code1, par1, arcs1, code2, par2, arcs2, running):
    """Simulate ``len(seeds)`` plays.

    ``rule = (eps_min, eps_max, kappa)`` with ``kappa > 0`` switches to the
    adaptive step.  Returns band-entry positions, steps, termination flags,
    running totals and the count of undefined moves.
    """
    n = seeds.shape[0]
    d = x0.shape[0]
    final = np.empty((n, d))
    steps = np.zeros(n, dtype=np.int64)
    term = np.zeros(n, dtype=np.bool_)
    run = np.zeros(n)
    work = np.zeros((5, d))
    state = np.zeros(1, dtype=np.uint64)
    fallbacks = _loop(x0, seeds, dom_code, dom, noise_code, atoms, cumw, radius, alpha, eps_fixed,
                      rule, cap, alternating, code1, par1, arcs1, code2, par2, arcs2, running,
                      final, steps, term, run, work, state)
    return final, steps, term, run, fallbacks
