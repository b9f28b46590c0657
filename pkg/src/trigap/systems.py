"""Ranked-path simulation and the unfolding into named particles.

``simulate_ranks`` samples the drivers of a system on a grid, solves the
coupled reflection for the gap pair (G, H) and the local times (A, Gamma),
and assembles the ranked paths R1 >= R2 >= R3. The middle rank is built from
its explicit formula; the outer ranks are reconstructed as R2 + G and
R2 - H with G, H >= 0, so the ordering holds exactly at every grid index
(rounding is monotone) and subtracting ranks recovers the gaps to within
one ulp.

``unfold_names`` inverts the ranking: between corner-free excursions of
min(G, H) the assignment of names to ranks is constant, and at each
excursion start the two names involved in the collision the excursion grew
out of are exchanged with probability 1/2. Which collision that was is read
off the paths: the gap whose last boundary visit is more recent. The result
is a triple of named motions whose multiset of values coincides with the
ranked triple at every grid point, together with the per-name noise
accumulated while occupying a Brownian rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import SamplePath, SimConfig, SystemKind, TimeGrid
from .skorokhod import GapPair, RegulatorPair, solve_coupled_regulators

__all__ = [
    "PermutationState",
    "RankTriple",
    "NameTriple",
    "CollisionReport",
    "BrownianCheckReport",
    "simulate_ranks",
    "detect_collisions",
    "unfold_names",
    "verify_recovered_brownians",
]


# the six permutations as rank-of-name rows, lexicographic; code 0 = identity
_PERMS: tuple[tuple[int, int, int], ...] = (
    (0, 1, 2),
    (0, 2, 1),
    (1, 0, 2),
    (1, 2, 0),
    (2, 0, 1),
    (2, 1, 0),
)
_PERM_INDEX = {p: i for i, p in enumerate(_PERMS)}
_PERM_TABLE = np.array(_PERMS, dtype=np.int8)


def _swap_code(code: int, swap: tuple[int, int, int]) -> int:
    """Compose the permutation with a rank transposition."""
    r = _PERMS[code]
    return _PERM_INDEX[tuple(swap[x] for x in r)]


_SWAP01 = (1, 0, 2)  # exchange ranks 1 and 2
_SWAP12 = (0, 2, 1)  # exchange ranks 2 and 3
_TRANS01 = np.array([_swap_code(c, _SWAP01) for c in range(6)], dtype=np.uint8)
_TRANS12 = np.array([_swap_code(c, _SWAP12) for c in range(6)], dtype=np.uint8)


@dataclass(frozen=True)
class PermutationState:
    """Assignment of names to ranks; rank_of_name[i] is the rank of name i."""

    rank_of_name: tuple[int, int, int]

    def __post_init__(self) -> None:
        if sorted(self.rank_of_name) != [0, 1, 2]:
            raise ValueError(f"not a permutation: {self.rank_of_name!r}")

    def matrix(self) -> np.ndarray:
        """0/1 matrix Z with Z[i, k] = 1 iff name i occupies rank k."""
        z = np.zeros((3, 3), dtype=np.int8)
        for i, k in enumerate(self.rank_of_name):
            z[i, k] = 1
        return z

    @classmethod
    def identity(cls) -> "PermutationState":
        return cls((0, 1, 2))


@dataclass(frozen=True, eq=False)
class RankTriple:
    """Ranked paths with their reflection data and driving noise."""

    R1: SamplePath
    R2: SamplePath
    R3: SamplePath
    regulators: RegulatorPair
    gaps: GapPair
    w_paths: dict[str, SamplePath]
    config: SimConfig
    picard_iterations: int

    @property
    def grid(self) -> TimeGrid:
        return self.R1.grid


@dataclass(frozen=True, eq=False)
class NameTriple:
    """Named (unfolded) particle paths.

    ``rank_codes[k]`` indexes the permutation in force on [t_k, t_{k+1});
    ``B1..B3`` accumulate the driving-noise increments of whichever Brownian
    rank the name occupies (flat while it occupies a ballistic rank).
    """

    X1: SamplePath
    X2: SamplePath
    X3: SamplePath
    B1: SamplePath
    B2: SamplePath
    B3: SamplePath
    rank_codes: np.ndarray
    excursion_starts: np.ndarray
    excursion_origins: np.ndarray
    noisy_ranks: tuple[int, ...]

    def permutation_at(self, k: int) -> PermutationState:
        return PermutationState(tuple(int(r) for r in _PERM_TABLE[self.rank_codes[k]]))

    @property
    def names(self) -> tuple[SamplePath, SamplePath, SamplePath]:
        return (self.X1, self.X2, self.X3)


@dataclass(frozen=True)
class CollisionReport:
    """Collision bookkeeping at threshold eta.

    Counts are numbers of grid indices inside the eta-neighbourhoods
    (occupation counts at grid resolution); ``first_triple_collision_index``
    is the first grid index with G + H <= eta, or None if the corner is
    never approached.
    """

    eta: float
    first_triple_collision_index: int | None
    g_collision_count: int
    h_collision_count: int
    corner_visits: int
    min_gap_sum: float


def simulate_ranks(config: SimConfig, max_iter: int = 200) -> RankTriple:
    """Simulate the ranked triple of a system on the configured grid.

    The driver noise is drawn from a dedicated stream
    SeedSequence(seed, spawn_key=(replication_index, 0)), so replications
    are reproducible independently of execution order. For the two-noise
    system the W1 increments are drawn before the W3 increments.

    Args:
        config: validated simulation configuration.
        max_iter: Picard sweep budget for the coupled solve.

    Returns:
        RankTriple; the ordering R1 >= R2 >= R3 holds exactly by
        construction (outer ranks are R2 + G and R2 - H).
    """
    grid = config.grid
    n = grid.n_steps
    dt = grid.dt
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(config.replication_index, 0))
    )
    sq = math.sqrt(dt)
    t = grid.times()
    d1, d2, d3 = config.drifts.delta1, config.drifts.delta2, config.drifts.delta3
    m1, m2 = d1 - d2, d2 - d3
    zero = np.zeros(1)
    if config.system is SystemKind.MIDDLE_BALLISTIC:
        w1 = np.concatenate([zero, np.cumsum(rng.normal(0.0, sq, n))])
        w3 = np.concatenate([zero, np.cumsum(rng.normal(0.0, sq, n))])
        z1 = m1 * t + w1
        z2 = m2 * t - w3
        w_paths = {"W1": SamplePath(grid, w1), "W3": SamplePath(grid, w3)}
    else:
        w = np.concatenate([zero, np.cumsum(rng.normal(0.0, sq, n))])
        z1 = m1 * t - w
        z2 = m2 * t + w
        w_paths = {"W": SamplePath(grid, w)}
    spec = config.reflection
    regulators, gaps, iters = solve_coupled_regulators(
        spec,
        SamplePath(grid, z1),
        SamplePath(grid, z2),
        config.x0.g0,
        config.x0.h0,
        tol=config.picard_tol,
        max_iter=max_iter,
    )
    a_coef, gm_coef = config.system.regulator_split[1]
    r2 = config.x0.x2 + d2 * t + a_coef * regulators.A.values + gm_coef * regulators.Gamma.values
    if 1 in config.system.noisy_ranks:
        r2 = r2 + w_paths["W"].values
    r1 = r2 + gaps.G.values
    r3 = r2 - gaps.H.values
    return RankTriple(
        R1=SamplePath(grid, r1),
        R2=SamplePath(grid, r2),
        R3=SamplePath(grid, r3),
        regulators=regulators,
        gaps=gaps,
        w_paths=w_paths,
        config=config,
        picard_iterations=iters,
    )


def detect_collisions(ranks: RankTriple, eta: float) -> CollisionReport:
    """Locate collisions of the ranked triple at threshold eta.

    Args:
        ranks: simulated triple.
        eta: collision threshold (> 0); a triple collision is G + H <= eta.

    Returns:
        CollisionReport; counts are the numbers of grid indices with
        G <= eta, H <= eta, and G + H <= eta respectively.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta!r}")
    g = ranks.gaps.G.values
    h = ranks.gaps.H.values
    gsum = g + h
    hits = np.flatnonzero(gsum <= eta)
    return CollisionReport(
        eta=eta,
        first_triple_collision_index=int(hits[0]) if hits.size else None,
        g_collision_count=int(np.sum(g <= eta)),
        h_collision_count=int(np.sum(h <= eta)),
        corner_visits=int(hits.size),
        min_gap_sum=float(gsum.min()),
    )


def unfold_names(
    ranks: RankTriple, epsilon: float, rng: np.random.Generator
) -> NameTriple:
    """Unfold ranked paths into named particles by randomized collisions.

    Excursions of min(G, H) above epsilon partition the horizon; within one
    excursion the name-to-rank assignment is constant. At each excursion
    start the origin collision is identified from the more recent boundary
    visit (G at 0 -> ranks 1,2 collided; H at 0 -> ranks 2,3), and the two
    names at those ranks are exchanged with probability 1/2. If neither gap
    has visited the boundary yet, or both visited last at the same index,
    the assignment is left alone. One uniform draw is consumed per
    excursion start regardless of origin, so the coin stream advances
    deterministically with the excursion count.

    Args:
        ranks: simulated triple.
        epsilon: excursion threshold; must exceed the solver tolerance the
            boundary-visit test uses.
        rng: coin stream (kept separate from the path stream by callers).

    Returns:
        NameTriple with named paths, per-name recovered noise, and the
        permutation code path.

    Raises:
        ValueError: if epsilon <= the configured solver tolerance, or for
            the asymmetric-collision system, whose half-half exchange law
            would be wrong and whose name construction past a triple
            collision is an open problem.
    """
    if ranks.config.system is SystemKind.SKEW_ELASTIC:
        raise ValueError(
            "name unfolding is defined for the even-split systems only"
        )
    ztol = ranks.config.picard_tol
    if epsilon <= ztol:
        raise ValueError(
            f"epsilon = {epsilon!r} must exceed the solver tolerance {ztol!r}"
        )
    g = ranks.gaps.G.values
    h = ranks.gaps.H.values
    n_points = g.shape[0]
    starts, _ends, origins = _kernels.scan_excursions(
        g, h, float(epsilon), float(ztol)
    )
    coins = rng.random(starts.shape[0])
    codes = np.empty(n_points, dtype=np.uint8)
    cur = 0
    prev = 0
    for i in range(starts.shape[0]):
        s = int(starts[i])
        codes[prev:s] = cur
        if coins[i] < 0.5:
            if origins[i] == 1:
                cur = int(_TRANS01[cur])
            elif origins[i] == 2:
                cur = int(_TRANS12[cur])
        prev = s
    codes[prev:] = cur

    grid = ranks.grid
    rof = _PERM_TABLE[codes]  # (n_points, 3): rank of each name per point
    r_stack = np.stack([ranks.R1.values, ranks.R2.values, ranks.R3.values])
    idx = np.arange(n_points)
    xs = [SamplePath(grid, r_stack[rof[:, i], idx]) for i in range(3)]

    dw_by_rank = np.zeros((3, grid.n_steps))
    if ranks.config.system is SystemKind.MIDDLE_BALLISTIC:
        dw_by_rank[0] = np.diff(ranks.w_paths["W1"].values)
        dw_by_rank[2] = np.diff(ranks.w_paths["W3"].values)
    else:
        dw_by_rank[1] = np.diff(ranks.w_paths["W"].values)
    step_idx = np.arange(grid.n_steps)
    bs = []
    for i in range(3):
        db = dw_by_rank[rof[:-1, i], step_idx]
        bs.append(SamplePath(grid, np.concatenate([[0.0], np.cumsum(db)])))

    return NameTriple(
        X1=xs[0],
        X2=xs[1],
        X3=xs[2],
        B1=bs[0],
        B2=bs[1],
        B3=bs[2],
        rank_codes=codes,
        excursion_starts=starts,
        excursion_origins=origins,
        noisy_ranks=ranks.config.system.noisy_ranks,
    )


@dataclass(frozen=True)
class BrownianCheckReport:
    """Distributional diagnostics for the recovered per-name noise.

    All statistics are restricted to the steps a name spends at a Brownian
    rank. ``qv_z[i]`` standardizes quadratic variation against the occupied
    time, ``autocorr_z[i]`` the lag-1 correlation of the collected
    increments, and ``pair_z[(i, j)]`` the correlation between two names'
    increments over the steps both are at Brownian ranks (only the
    two-noise system has such overlaps).
    """

    noisy_steps: tuple[int, int, int]
    qv_z: tuple[float, float, float]
    autocorr_z: tuple[float, float, float]
    pair_z: dict[tuple[int, int], float]

    @property
    def max_abs_z(self) -> float:
        zs = [z for z in self.qv_z + self.autocorr_z if not math.isnan(z)]
        zs.extend(z for z in self.pair_z.values() if not math.isnan(z))
        return max(abs(z) for z in zs) if zs else float("nan")


def verify_recovered_brownians(
    names: NameTriple, grid: TimeGrid
) -> BrownianCheckReport:
    """Check that each recovered noise path behaves like a Brownian motion.

    Args:
        names: unfolded triple.
        grid: the sampling grid of the paths.

    Returns:
        BrownianCheckReport with z-scores (NaN where a name never occupies
        a noisy rank or an overlap is empty).
    """
    dt = grid.dt
    rof = _PERM_TABLE[names.rank_codes[:-1]]  # rank during each step
    noisy = np.isin(rof, np.asarray(names.noisy_ranks, dtype=np.int8))
    dbs = [np.diff(b.values) for b in (names.B1, names.B2, names.B3)]
    counts, qv_z, ac_z = [], [], []
    for i in range(3):
        mask = noisy[:, i]
        db = dbs[i][mask]
        n_i = db.shape[0]
        counts.append(int(n_i))
        if n_i == 0:
            qv_z.append(float("nan"))
            ac_z.append(float("nan"))
            continue
        qv = float(np.sum(db * db))
        # Var of a squared N(0, dt) increment is 2 dt^2
        qv_z.append((qv / (n_i * dt) - 1.0) * math.sqrt(n_i / 2.0))
        if n_i < 3:
            ac_z.append(float("nan"))
        else:
            c = np.corrcoef(db[:-1], db[1:])[0, 1]
            ac_z.append(float(c) * math.sqrt(n_i - 1))
    pair_z: dict[tuple[int, int], float] = {}
    for i in range(3):
        for j in range(i + 1, 3):
            both = noisy[:, i] & noisy[:, j]
            n_ij = int(both.sum())
            if n_ij < 3:
                pair_z[(i, j)] = float("nan")
                continue
            c = np.corrcoef(dbs[i][both], dbs[j][both])[0, 1]
            pair_z[(i, j)] = float(c) * math.sqrt(n_ij)
    return BrownianCheckReport(
        noisy_steps=tuple(counts),
        qv_z=tuple(qv_z),
        autocorr_z=tuple(ac_z),
        pair_z=pair_z,
    )
