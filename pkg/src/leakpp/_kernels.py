"""Hot loops for the scheduler, jit-compiled with numba when available.

Every count-based stepping kernel consumes exactly three uniforms per
interaction step (leak coin, first draw, second draw) so that the python
reference stepper in ``simulate`` and these kernels walk the same random
stream and produce bit-identical trajectories for a given seed. The
coupled-schedule kernel consumes two uniforms per step (pair indices only).

Kernels release the GIL so batch runs can use threads.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, belt and braces
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True, nogil=True)
def _pick(counts, r):
    # First species whose cumulative count exceeds r; r is uniform on [0, total).
    a = 0
    c = counts[0]
    while r >= c:
        a += 1
        c += counts[a]
    return a


@njit(cache=True, nogil=True)
def count_steps(counts, n, prod1, prod2, leak_map, leak_p, u):
    """Advance ``u.shape[0] // 3`` steps in place on the counts vector."""
    m = u.shape[0] // 3
    for t in range(m):
        if u[3 * t] < leak_p:
            a = _pick(counts, u[3 * t + 1] * n)
            tgt = leak_map[a]
            if tgt >= 0 and tgt != a:
                counts[a] -= 1
                counts[tgt] += 1
        else:
            a = _pick(counts, u[3 * t + 1] * n)
            counts[a] -= 1
            b = _pick(counts, u[3 * t + 2] * (n - 1))
            counts[a] += 1
            p = prod1[a, b]
            if p >= 0:
                counts[a] -= 1
                counts[b] -= 1
                counts[p] += 1
                counts[prod2[a, b]] += 1


@njit(cache=True, nogil=True)
def count_steps_occupancy(counts, n, prod1, prod2, leak_map, leak_p, u, radix, hist, skip):
    """Like count_steps, also tallying the post-step configuration code.

    ``skip`` steps at the start of the buffer are executed without tallying
    (burn-in carry-over). Configuration code is sum(counts[i] * radix[i]).
    """
    m = u.shape[0] // 3
    for t in range(m):
        if u[3 * t] < leak_p:
            a = _pick(counts, u[3 * t + 1] * n)
            tgt = leak_map[a]
            if tgt >= 0 and tgt != a:
                counts[a] -= 1
                counts[tgt] += 1
        else:
            a = _pick(counts, u[3 * t + 1] * n)
            counts[a] -= 1
            b = _pick(counts, u[3 * t + 2] * (n - 1))
            counts[a] += 1
            p = prod1[a, b]
            if p >= 0:
                counts[a] -= 1
                counts[b] -= 1
                counts[p] += 1
                counts[prod2[a, b]] += 1
        if t >= skip:
            code = 0
            for i in range(counts.shape[0]):
                code += counts[i] * radix[i]
            hist[code] += 1


@njit(cache=True, nogil=True)
def count_steps_until_clear(counts, n, prod1, prod2, u, watch):
    """Leak-free stepping that stops once every watched species count is zero.

    Returns the number of steps executed: the full buffer if the watched
    total stayed positive, or the step index (1-based) at which it hit zero.
    A second return flags whether clearing happened.
    """
    watched = 0
    for i in range(counts.shape[0]):
        if watch[i]:
            watched += counts[i]
    if watched == 0:
        return 0, True
    m = u.shape[0] // 3
    for t in range(m):
        a = _pick(counts, u[3 * t + 1] * n)
        counts[a] -= 1
        b = _pick(counts, u[3 * t + 2] * (n - 1))
        counts[a] += 1
        p = prod1[a, b]
        if p >= 0:
            q = prod2[a, b]
            counts[a] -= 1
            counts[b] -= 1
            counts[p] += 1
            counts[q] += 1
            if watch[a]:
                watched -= 1
            if watch[b]:
                watched -= 1
            if watch[p]:
                watched += 1
            if watch[q]:
                watched += 1
            if watched == 0:
                return t + 1, True
    return m, False


@njit(cache=True, nogil=True)
def individual_steps(states, counts, n, prod1, prod2, leak_map, leak_p, u):
    """Molecule-array stepping; keeps the counts vector in sync."""
    m = u.shape[0] // 3
    for t in range(m):
        if u[3 * t] < leak_p:
            i = int(u[3 * t + 1] * n)
            a = states[i]
            tgt = leak_map[a]
            if tgt >= 0 and tgt != a:
                states[i] = tgt
                counts[a] -= 1
                counts[tgt] += 1
        else:
            i = int(u[3 * t + 1] * n)
            j = int(u[3 * t + 2] * (n - 1))
            if j >= i:
                j += 1
            a = states[i]
            b = states[j]
            p = prod1[a, b]
            if p >= 0:
                q = prod2[a, b]
                states[i] = p
                states[j] = q
                counts[a] -= 1
                counts[b] -= 1
                counts[p] += 1
                counts[q] += 1


@njit(cache=True, nogil=True)
def individual_steps_occupancy(states, counts, n, prod1, prod2, leak_map, leak_p, u, radix, hist, skip):
    m = u.shape[0] // 3
    for t in range(m):
        if u[3 * t] < leak_p:
            i = int(u[3 * t + 1] * n)
            a = states[i]
            tgt = leak_map[a]
            if tgt >= 0 and tgt != a:
                states[i] = tgt
                counts[a] -= 1
                counts[tgt] += 1
        else:
            i = int(u[3 * t + 1] * n)
            j = int(u[3 * t + 2] * (n - 1))
            if j >= i:
                j += 1
            a = states[i]
            b = states[j]
            p = prod1[a, b]
            if p >= 0:
                q = prod2[a, b]
                states[i] = p
                states[j] = q
                counts[a] -= 1
                counts[b] -= 1
                counts[p] += 1
                counts[q] += 1
        if t >= skip:
            code = 0
            for i in range(counts.shape[0]):
                code += counts[i] * radix[i]
            hist[code] += 1


@njit(cache=True, nogil=True)
def coupled_min_steps(su, sv, sw, levels, prod1, prod2, u):
    """Drive three populations through one shared pair schedule, no leaks.

    After each step, checks the pointwise relation
    level(u) == min(level(v), level(w)) at the two touched indices.
    Returns the 1-based step of the first violation, or -1 if none.
    """
    n = su.shape[0]
    m = u.shape[0] // 2
    for t in range(m):
        i = int(u[2 * t] * n)
        j = int(u[2 * t + 1] * (n - 1))
        if j >= i:
            j += 1

        a = su[i]
        b = su[j]
        if prod1[a, b] >= 0:
            su[i] = prod1[a, b]
            su[j] = prod2[a, b]
        a = sv[i]
        b = sv[j]
        if prod1[a, b] >= 0:
            sv[i] = prod1[a, b]
            sv[j] = prod2[a, b]
        a = sw[i]
        b = sw[j]
        if prod1[a, b] >= 0:
            sw[i] = prod1[a, b]
            sw[j] = prod2[a, b]

        lv = levels[sv[i]]
        lw = levels[sw[i]]
        lo = lv if lv < lw else lw
        if levels[su[i]] != lo:
            return t + 1
        lv = levels[sv[j]]
        lw = levels[sw[j]]
        lo = lv if lv < lw else lw
        if levels[su[j]] != lo:
            return t + 1
    return -1
