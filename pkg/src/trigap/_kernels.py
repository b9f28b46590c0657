"""Hot numerical kernels: numba-compiled with a pure-numpy fallback.

Every kernel exists in two implementations with identical floating-point
semantics (same max/accumulate orderings, so results are bitwise equal):

* ``*_nb``: numba njit, used when numba imports and ``DP_BACKEND`` does not
  say otherwise;
* ``*_np``: plain numpy, always available.

Selection happens once at import via the ``DP_BACKEND`` environment variable
(``numba`` or ``numpy``; default numba when importable). Both variants stay
reachable through :data:`IMPLEMENTATIONS` so the benchmark can time them side
by side without re-importing.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via DP_BACKEND=numpy
    HAS_NUMBA = False

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "IMPLEMENTATIONS",
    "picard_coupled",
    "reflect_running_max",
    "count_downcrossings",
    "scan_excursions",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _picard_coupled_np(z1, z2, g0, h0, q12, q21, tol, max_iter):
    """Jacobi iteration for the coupled running-max fixed point.

    A <- cummax(-g0 - z1 + q12 * Gamma)^+, Gamma <- cummax(-h0 - z2 + q21 * A)^+,
    both updates reading the previous sweep's iterates, starting from 0.
    Stops when the sup-norm change of both regulators drops below tol.

    Returns (A, Gamma, iterations, last_change).
    """
    a = np.zeros_like(z1)
    gm = np.zeros_like(z1)
    change = np.inf
    iters = 0
    for it in range(1, max_iter + 1):
        an = np.maximum(np.maximum.accumulate(-g0 - z1 + q12 * gm), 0.0)
        gn = np.maximum(np.maximum.accumulate(-h0 - z2 + q21 * a), 0.0)
        change = max(
            float(np.max(np.abs(an - a))), float(np.max(np.abs(gn - gm)))
        )
        a, gm = an, gn
        iters = it
        if change < tol:
            break
    return a, gm, iters, change


def _reflect_running_max_np(u):
    """One-sided reflection: L = cummax(-u)^+, G = u + L."""
    length = np.maximum(np.maximum.accumulate(-u), 0.0)
    return u + length, length


def _count_downcrossings_np(x, lo, hi):
    """Transitions of x from >= hi down to <= lo, armed at hi first."""
    sign = np.zeros(x.shape[0], dtype=np.int8)
    sign[x >= hi] = 1
    sign[x <= lo] = -1
    moves = sign[sign != 0]
    if moves.shape[0] < 2:
        return 0
    return int(np.sum((moves[:-1] == 1) & (moves[1:] == -1)))


def _scan_excursions_np(g, h, eps, ztol):
    """Excursion starts of min(G, H) away from the boundary, with origins.

    An excursion starts at the first index (after the previous excursion
    ended by min(G, H) <= ztol) where min(G, H) >= eps. Its origin is the
    gap whose last visit to [0, ztol] is more recent: 1 for G, 2 for H, 0
    when neither has visited yet or both visited at the same index.

    Returns (starts, ends, origins); ends[i] is the first index >= starts[i]
    with min(G, H) <= ztol, or n (one past the end) if the path never
    returns before the horizon.
    """
    n = g.shape[0]
    gmin = np.minimum(g, h)
    above = np.flatnonzero(gmin >= eps)
    atzero = np.flatnonzero(gmin <= ztol)
    gzero = np.flatnonzero(g <= ztol)
    hzero = np.flatnonzero(h <= ztol)
    starts, ends, origins = [], [], []
    pos = 0
    while True:
        i = np.searchsorted(above, pos)
        if i == above.shape[0]:
            break
        start = int(above[i])
        jg = np.searchsorted(gzero, start)
        jh = np.searchsorted(hzero, start)
        last_g = int(gzero[jg - 1]) if jg > 0 else -1
        last_h = int(hzero[jh - 1]) if jh > 0 else -1
        if last_g == last_h:
            origin = 0
        elif last_g > last_h:
            origin = 1
        else:
            origin = 2
        k = np.searchsorted(atzero, start)
        end = int(atzero[k]) if k < atzero.shape[0] else n
        starts.append(start)
        ends.append(end)
        origins.append(origin)
        if end >= n:
            break
        pos = end
    return (
        np.asarray(starts, dtype=np.int64),
        np.asarray(ends, dtype=np.int64),
        np.asarray(origins, dtype=np.int8),
    )


# ---------------------------------------------------------------------------
# numba implementations (same semantics, fused loops)
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _picard_coupled_nb(z1, z2, g0, h0, q12, q21, tol, max_iter):
        n = z1.shape[0]
        a = np.zeros(n)
        gm = np.zeros(n)
        an = np.empty(n)
        gn = np.empty(n)
        change = np.inf
        iters = 0
        for it in range(1, max_iter + 1):
            # running maxima start at 0.0: that is the positive-part clamp
            acc_a = 0.0
            acc_g = 0.0
            change = 0.0
            for k in range(n):
                b = -g0 - z1[k] + q12 * gm[k]
                if b > acc_a:
                    acc_a = b
                an[k] = acc_a
                d = an[k] - a[k]
                if d < 0.0:
                    d = -d
                if d > change:
                    change = d
                b = -h0 - z2[k] + q21 * a[k]
                if b > acc_g:
                    acc_g = b
                gn[k] = acc_g
                d = gn[k] - gm[k]
                if d < 0.0:
                    d = -d
                if d > change:
                    change = d
            tmp = a
            a = an
            an = tmp
            tmp = gm
            gm = gn
            gn = tmp
            iters = it
            if change < tol:
                break
        return a, gm, iters, change

    @njit(cache=True, nogil=True)
    def _reflect_running_max_nb(u):
        n = u.shape[0]
        g = np.empty(n)
        length = np.empty(n)
        acc = 0.0
        for k in range(n):
            b = -u[k]
            if b > acc:
                acc = b
            length[k] = acc
            g[k] = u[k] + acc
        return g, length

    @njit(cache=True, nogil=True)
    def _count_downcrossings_nb(x, lo, hi):
        count = 0
        armed = False
        for k in range(x.shape[0]):
            v = x[k]
            if v >= hi:
                armed = True
            elif armed and v <= lo:
                count += 1
                armed = False
        return count

    @njit(cache=True, nogil=True)
    def _scan_excursions_nb(g, h, eps, ztol):
        n = g.shape[0]
        cap = 64
        starts = np.empty(cap, dtype=np.int64)
        ends = np.empty(cap, dtype=np.int64)
        origins = np.empty(cap, dtype=np.int8)
        count = 0
        waiting = True
        last_g = -1
        last_h = -1
        for k in range(n):
            if g[k] <= ztol:
                last_g = k
            if h[k] <= ztol:
                last_h = k
            lo = g[k] if g[k] < h[k] else h[k]
            if waiting:
                if lo >= eps:
                    if count == cap:
                        cap *= 2
                        ns = np.empty(cap, dtype=np.int64)
                        ne = np.empty(cap, dtype=np.int64)
                        no = np.empty(cap, dtype=np.int8)
                        ns[:count] = starts[:count]
                        ne[:count] = ends[:count]
                        no[:count] = origins[:count]
                        starts, ends, origins = ns, ne, no
                    starts[count] = k
                    ends[count] = n
                    if last_g == last_h:
                        origins[count] = 0
                    elif last_g > last_h:
                        origins[count] = 1
                    else:
                        origins[count] = 2
                    count += 1
                    waiting = False
            else:
                if lo <= ztol:
                    ends[count - 1] = k
                    waiting = True
        return starts[:count].copy(), ends[:count].copy(), origins[:count].copy()


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

IMPLEMENTATIONS: dict[str, dict[str, object]] = {
    "numpy": {
        "picard_coupled": _picard_coupled_np,
        "reflect_running_max": _reflect_running_max_np,
        "count_downcrossings": _count_downcrossings_np,
        "scan_excursions": _scan_excursions_np,
    }
}
if HAS_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "picard_coupled": _picard_coupled_nb,
        "reflect_running_max": _reflect_running_max_nb,
        "count_downcrossings": _count_downcrossings_nb,
        "scan_excursions": _scan_excursions_nb,
    }


def _select_backend() -> str:
    requested = os.environ.get("DP_BACKEND", "").strip().lower()
    if requested:
        if requested not in ("numba", "numpy"):
            raise ValueError(
                f"DP_BACKEND must be 'numba' or 'numpy', got {requested!r}"
            )
        if requested == "numba" and not HAS_NUMBA:
            raise ImportError("DP_BACKEND=numba but numba is not installed")
        return requested
    return "numba" if HAS_NUMBA else "numpy"


BACKEND = _select_backend()

picard_coupled = IMPLEMENTATIONS[BACKEND]["picard_coupled"]
reflect_running_max = IMPLEMENTATIONS[BACKEND]["reflect_running_max"]
count_downcrossings = IMPLEMENTATIONS[BACKEND]["count_downcrossings"]
scan_excursions = IMPLEMENTATIONS[BACKEND]["scan_excursions"]
