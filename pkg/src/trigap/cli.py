"""Experiment orchestration: configuration, parallel replications, flat files.

An :class:`ExperimentSpec` bundles a simulation configuration with a
replication count and estimator parameters. :func:`run_experiment` executes
the replications on a thread pool (the hot kernels release the GIL), reduces
them in replication-index order so the merged numbers are independent of the
parallelism degree, and writes:

* ``summary.json``: the merged ensemble report (schema-versioned, sorted
  keys, deterministic bytes for a fixed spec);
* ``replications.json``: one scalar record per replication;
* ``paths_rep<i>.csv``: full paths, only when requested.

The ``trigap`` console entry point drives all of this from flags, an
optional flat key=value config file, and built-in experiment presets.
Statistical verdicts live in the reports; the exit code only signals hard
failures (0 success, 1 invariant violation such as solver non-convergence
beyond the failure budget, 2 usage or configuration error, 3 I/O error).
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import click
import numpy as np

from . import stats
from .analysis import corner_constants, lyapunov_drift_check
from .model import (
    DriftSpec,
    InitialPositions,
    SimConfig,
    SystemKind,
    TimeGrid,
    stationarity_check,
)
from .skorokhod import NonConvergence
from .systems import NameTriple, RankTriple, simulate_ranks, unfold_names

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentSpec",
    "run_experiment",
    "emit_paths",
    "emit_summary",
    "main",
]

SCHEMA_VERSION = "1.0"

# default transform grids: every alpha1/alpha2 that appears in a pair must
# also appear in nu_alphas for the adjoint residual to be computable
DEFAULT_ALPHA_PAIRS: tuple[tuple[float, float], ...] = (
    (0.5, 0.25),
    (1.0, 0.5),
    (0.25, 0.75),
    (1.5, 1.0),
    (2.0, 0.5),
    (0.75, 1.5),
)
DEFAULT_NU_ALPHAS: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """A named batch of replications plus estimator parameters."""

    name: str
    config: SimConfig
    replications: int
    out_dir: Path
    alpha_pairs: tuple[tuple[float, float], ...] = DEFAULT_ALPHA_PAIRS
    nu_alphas: tuple[float, ...] = DEFAULT_NU_ALPHAS
    ks_level: float = 0.05
    emit_full_paths: bool = False
    failure_budget: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("experiment name must be nonempty")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.failure_budget < 0:
            raise ValueError("failure budget must be >= 0")


def coin_stream(config: SimConfig) -> np.random.Generator:
    """The unfolding coin stream paired with a configuration.

    Kept disjoint from the path stream (spawn key slot 1 vs 0) so adding or
    removing unfolding never perturbs the simulated ranks.
    """
    return np.random.default_rng(
        np.random.SeedSequence(
            entropy=config.seed, spawn_key=(config.replication_index, 1)
        )
    )


def emit_paths(ranks: RankTriple, out_path: Path, names: NameTriple | None = None) -> None:
    """Write one replication's full paths as CSV.

    Columns are t,R1,R2,R3,G,H,A,Gamma, then X1,X2,X3 when an unfolding is
    supplied, then the driving noise (W, or W1 and W3 for the two-noise
    system). Floats carry 17 significant digits, so re-reading reproduces
    the doubles exactly and a fixed (seed, config) yields identical bytes.
    """
    grid = ranks.grid
    cols: list[tuple[str, np.ndarray]] = [
        ("t", grid.times()),
        ("R1", ranks.R1.values),
        ("R2", ranks.R2.values),
        ("R3", ranks.R3.values),
        ("G", ranks.gaps.G.values),
        ("H", ranks.gaps.H.values),
        ("A", ranks.regulators.A.values),
        ("Gamma", ranks.regulators.Gamma.values),
    ]
    if names is not None:
        cols += [("X1", names.X1.values), ("X2", names.X2.values), ("X3", names.X3.values)]
    for key in ("W", "W1", "W3"):
        if key in ranks.w_paths:
            cols.append((key, ranks.w_paths[key].values))
    header = ",".join(name for name, _ in cols)
    data = np.column_stack([values for _, values in cols])
    np.savetxt(out_path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def _mean_se_doc(m: stats.MeanSE) -> dict:
    lo, hi = m.ci95
    return {"mean": m.mean, "se": m.se, "n": m.n, "ci95": [lo, hi]}


def _replication_doc(s: stats.ReplicationSummary) -> dict:
    c = s.collision
    return {
        "replication_index": s.replication_index,
        "lambda_hat": list(s.lambda_hat),
        "slln2": list(s.slln2),
        "gap_means": s.gap_means,
        "nu_total": list(s.nu_total),
        "pi_hat": {f"{a1:g},{a2:g}": v for (a1, a2), v in s.pi_hat.items()},
        "nu1_hat": {f"{a:g}": v for a, v in s.nu_hat[0].items()},
        "nu2_hat": {f"{a:g}": v for a, v in s.nu_hat[1].items()},
        "collision": {
            "eta": c.eta,
            "first_triple_collision_index": c.first_triple_collision_index,
            "g_collision_count": c.g_collision_count,
            "h_collision_count": c.h_collision_count,
            "corner_visits": c.corner_visits,
            "min_gap_sum": c.min_gap_sum,
        },
        "occupancy": s.occupancy.tolist() if s.occupancy is not None else None,
        "tau_dec": s.tau_dec,
        "n_thinned": int(s.thinned_g.shape[0]),
        "picard_iterations": s.picard_iterations,
    }


def emit_summary(
    ensemble: stats.EnsembleSummary,
    spec: ExperimentSpec,
    summaries: Sequence[stats.ReplicationSummary],
) -> dict:
    """Assemble the merged JSON document for an experiment.

    Contains the config echo, the closed-form rates next to their
    estimates, boundary masses, the adjoint residual table, marginal KS
    reports (when the rates define a positive target law), the occupancy
    matrix, collision statistics, and the Lyapunov/corner constants.
    """
    cfg = spec.config
    refl = cfg.reflection
    l1, l2 = float(refl.lam[0]), float(refl.lam[1])
    stat = stationarity_check(cfg.system, cfg.drifts)

    lln = stats.lln_rates(summaries, refl, cfg.drifts) if stat else None
    masses = stats.boundary_masses(summaries, refl)

    residual_rows = []
    for pair in spec.alpha_pairs:
        try:
            (row,) = stats.laplace_bar_residual(summaries, [pair], cfg.drifts)
        except ValueError as exc:
            residual_rows.append(
                {"alpha1": pair[0], "alpha2": pair[1], "error": str(exc)}
            )
            continue
        residual_rows.append(
            {
                "alpha1": row.alpha1,
                "alpha2": row.alpha2,
                "residual": _mean_se_doc(row.residual),
                "z": row.z,
            }
        )

    ks_doc = None
    if stat and l1 > 0 and l2 > 0:
        prod = stats.product_exponential_test(summaries, refl)
        ks_doc = {
            "rates": list(prod.rates),
            "ks_g": prod.ks_g,
            "ks_h": prod.ks_h,
            "ks_critical_95": prod.ks_critical,
            "n_pooled": prod.n_pooled,
            "mean_g": _mean_se_doc(prod.mean_g),
            "mean_h": _mean_se_doc(prod.mean_h),
            "mean_targets": list(prod.mean_targets),
            "gap_correlation": _mean_se_doc(prod.gap_correlation),
        }

    lyap_doc = None
    if l1 > 0 and l2 > 0:
        rep = lyapunov_drift_check((l1, l2))
        lyap_doc = {
            "kappa": rep.kappa,
            "a": rep.a,
            "epsilon": rep.epsilon,
            "log_b": rep.log_b,
            "passed": rep.passed,
            "max_violation": rep.max_violation,
            "violating_node": list(rep.violating_node) if rep.violating_node else None,
        }
    consts = corner_constants()

    grid = cfg.grid
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": spec.name,
        "config": {
            "system": cfg.system.value,
            "delta": [cfg.drifts.delta1, cfg.drifts.delta2, cfg.drifts.delta3],
            "x0": [cfg.x0.x1, cfg.x0.x2, cfg.x0.x3],
            "dt": grid.dt,
            "steps": grid.n_steps,
            "horizon": grid.horizon,
            "replications": spec.replications,
            "seed": cfg.seed,
            "eta": cfg.eta,
            "epsilon": cfg.epsilon,
            "picard_tol": cfg.picard_tol,
        },
        "stationary": {"value": bool(stat), "diagnostic": stat.diagnostic},
        "lambda_closed_form": [l1, l2],
        "lambda_hat": [_mean_se_doc(m) for m in ensemble.lambda_hat],
        "slln2": {
            "estimates": [_mean_se_doc(m) for m in ensemble.slln2],
            "targets": list(lln.slln2_target) if lln else None,
        },
        "gap_means": {k: _mean_se_doc(v) for k, v in ensemble.gap_means.items()},
        "boundary_masses": {
            "nu1": _mean_se_doc(masses.nu1),
            "nu2": _mean_se_doc(masses.nu2),
            "total": _mean_se_doc(masses.total),
            "target": list(masses.target),
            "total_target": masses.total_target,
        },
        "laplace_residuals": residual_rows,
        "ks": ks_doc,
        "occupancy": {
            "mean": ensemble.mean_occupancy.tolist()
            if ensemble.mean_occupancy is not None
            else None,
            "n_with_occupancy": ensemble.n_with_occupancy,
        },
        "collisions": {
            "hit_fraction": ensemble.hit_fraction,
            "min_gap_sum": ensemble.min_gap_sum,
            "eta": cfg.eta,
        },
        "lyapunov": lyap_doc,
        "corner_constants": {
            "theta1": consts.theta1,
            "alpha": consts.alpha,
            "kappa_index": consts.kappa_index,
            "c0": consts.c0,
        },
        "replication_indices": list(ensemble.replication_indices),
    }


def _worker_count(replications: int) -> int:
    raw = os.environ.get("DP_THREADS", "").strip()
    if raw:
        workers = int(raw)
        if workers < 1:
            raise ValueError(f"DP_THREADS must be >= 1, got {raw!r}")
    else:
        workers = os.cpu_count() or 1
    return min(workers, replications)


def _run_replication(spec: ExperimentSpec, index: int) -> stats.ReplicationSummary:
    cfg = replace(spec.config, replication_index=index)
    ranks = simulate_ranks(cfg)
    names = None
    if cfg.system is not SystemKind.SKEW_ELASTIC:
        names = unfold_names(ranks, cfg.epsilon, coin_stream(cfg))
    if spec.emit_full_paths:
        emit_paths(ranks, spec.out_dir / f"paths_rep{index}.csv", names=names)
    return stats.summarize_replication(
        ranks,
        alpha_pairs=spec.alpha_pairs,
        nu_alphas=spec.nu_alphas,
        names=names,
    )


def run_experiment(spec: ExperimentSpec) -> int:
    """Execute all replications, write artifacts, return the exit status.

    Workers share nothing; results are merged in replication-index order so
    every reduction is deterministic regardless of DP_THREADS. Replications
    that raise NonConvergence are dropped if the failure budget allows,
    otherwise the run fails with status 1. I/O trouble yields status 3,
    configuration trouble 2.
    """
    try:
        workers = _worker_count(spec.replications)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        results: dict[int, stats.ReplicationSummary] = {}
        failures: list[tuple[int, NonConvergence]] = []
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_replication, spec, i): i
                for i in range(spec.replications)
            }
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except NonConvergence as exc:
                    failures.append((i, exc))
        if len(failures) > spec.failure_budget:
            for i, exc in failures:
                print(f"replication {i}: {exc}", file=sys.stderr)
            print(
                f"error: {len(failures)} non-convergent replications exceed "
                f"the budget of {spec.failure_budget}",
                file=sys.stderr,
            )
            return 1
        summaries = [results[i] for i in sorted(results)]
        ensemble = stats.ensemble_summary(summaries)
        doc = emit_summary(ensemble, spec, summaries)
        with open(spec.out_dir / "summary.json", "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(spec.out_dir / "replications.json", "w") as fh:
            json.dump([_replication_doc(s) for s in summaries], fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


# built-in experiments; the symmetric preset uses gamma = 1, i.e. equal
# drift gaps delta2 - delta1 = delta3 - delta2 = 1 and rate lambda = 2
PRESETS: dict[str, dict] = {
    "fig2-lln": {
        "system": "middle-diffusive",
        "delta": (0.01, 0.02, 0.03),
        "x0": (1.0, 0.0, -1.0),
        "dt": 0.05,
        "steps": 2_000_000,
        "reps": 32,
        "seed": 20260814,
        "paths": False,
    },
    "fig1-paths": {
        "system": "middle-diffusive",
        "delta": (-1.0, 0.0, 1.0),
        "x0": (1.0, 0.0, -1.0),
        "dt": 1e-3,
        "steps": 10_000,
        "reps": 1,
        "seed": 11,
        "paths": True,
    },
    "fig3-ballistic": {
        "system": "middle-ballistic",
        "delta": (-0.5, 0.0, 0.5),
        "x0": (1.0, 0.0, -1.0),
        "dt": 1e-3,
        "steps": 20_000,
        "reps": 1,
        "seed": 33,
        "paths": True,
    },
}

_DEFAULTS: dict = {
    "system": "middle-diffusive",
    "delta": (0.01, 0.02, 0.03),
    "x0": (1.0, 0.0, -1.0),
    "dt": 1e-3,
    "steps": 20_000,
    "reps": 4,
    "seed": 12345,
    "eps": None,
    "eta": None,
    "out": "trigap-out",
    "paths": False,
}

_BOOL_KEYS = {"paths"}
_INT_KEYS = {"steps", "reps", "seed"}
_FLOAT_KEYS = {"dt", "eps", "eta"}
_TRIPLE_KEYS = {"delta", "x0"}
_STR_KEYS = {"system", "out", "experiment"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _TRIPLE_KEYS | _STR_KEYS


def _parse_triple(text: str, key: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise click.UsageError(f"{key} needs three comma-separated numbers, got {text!r}")
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise click.UsageError(f"could not parse {key}={text!r}") from None
    return a, b, c


def _parse_config_file(path: Path) -> dict:
    """Flat key=value lines; # starts a comment; keys match the CLI flags."""
    settings: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_KEYS:
            raise click.UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _BOOL_KEYS:
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                settings[key] = value.lower() in ("true", "1")
            elif key in _INT_KEYS:
                settings[key] = int(value)
            elif key in _FLOAT_KEYS:
                settings[key] = float(value)
            elif key in _TRIPLE_KEYS:
                settings[key] = _parse_triple(value, key)
            else:
                settings[key] = value
        except ValueError:
            raise click.UsageError(f"{path}:{lineno}: could not parse {raw!r}") from None
    return settings


def build_spec(settings: dict, name: str) -> ExperimentSpec:
    """Turn a flat settings mapping into a validated ExperimentSpec."""
    try:
        system = SystemKind(settings["system"])
    except ValueError:
        raise click.UsageError(f"unknown system {settings['system']!r}") from None
    try:
        cfg = SimConfig(
            system=system,
            drifts=DriftSpec(*settings["delta"]),
            x0=InitialPositions(*settings["x0"]),
            grid=TimeGrid(dt=settings["dt"], n_steps=settings["steps"]),
            seed=settings["seed"],
            eta=settings.get("eta"),
            epsilon=settings.get("eps"),
        )
        return ExperimentSpec(
            name=name,
            config=cfg,
            replications=settings["reps"],
            out_dir=Path(settings["out"]),
            emit_full_paths=bool(settings.get("paths", False)),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--system", type=click.Choice([k.value for k in SystemKind]), default=None,
              help="Collision system.")
@click.option("--delta", default=None, help="Per-rank drifts delta1,delta2,delta3.")
@click.option("--x0", default=None, help="Initial positions x1,x2,x3 (strictly decreasing).")
@click.option("--dt", type=float, default=None, help="Grid step.")
@click.option("--steps", type=int, default=None, help="Number of grid steps.")
@click.option("--reps", type=int, default=None, help="Number of replications.")
@click.option("--seed", type=int, default=None, help="Base seed for all replications.")
@click.option("--eps", type=float, default=None, help="Unfolding excursion threshold.")
@click.option("--eta", type=float, default=None, help="Collision threshold.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--experiment", default=None, help="Built-in preset: " + ", ".join(PRESETS))
@click.option("--paths", "paths_flag", is_flag=True, default=False,
              help="Also write full path CSVs (large at small dt).")
@click.option("--config", "config_file", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Flat key=value config file; flags override it.")
def main(system, delta, x0, dt, steps, reps, seed, eps, eta, out, experiment,
         paths_flag, config_file) -> None:
    """Simulate competing three-particle systems and verify their gap laws."""
    settings = dict(_DEFAULTS)
    name = experiment or "custom"
    if experiment is not None:
        if experiment not in PRESETS:
            raise click.UsageError(
                f"unknown experiment {experiment!r}; choose from {', '.join(PRESETS)}"
            )
        settings.update(PRESETS[experiment])
    if config_file is not None:
        file_settings = _parse_config_file(config_file)
        preset = file_settings.pop("experiment", None)
        if preset is not None and experiment is None:
            if preset not in PRESETS:
                raise click.UsageError(f"unknown experiment {preset!r} in {config_file}")
            name = preset
            settings.update(PRESETS[preset])
        settings.update(file_settings)
    overrides = {
        "system": system,
        "delta": _parse_triple(delta, "delta") if delta is not None else None,
        "x0": _parse_triple(x0, "x0") if x0 is not None else None,
        "dt": dt,
        "steps": steps,
        "reps": reps,
        "seed": seed,
        "eps": eps,
        "eta": eta,
        "out": out,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    if paths_flag:
        settings["paths"] = True
    spec = build_spec(settings, name)
    code = run_experiment(spec)
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    main()
