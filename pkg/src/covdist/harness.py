"""Experiment runners and command-line interface.

Every runner is a pure function of its configuration: trials draw from
child seeds of the master seed and results are gathered by trial index, so
neither re-runs nor the thread count change the output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .asymptotics import PairSystem, asymptotic_law
from .clustering import ClusteringScenario, empirical_success, success_probability
from .errors import ConfigError, CovdistError, NumericalError
from .estimators import METRICS, consistent_distance, plugin_distance, true_distance
from .spectral import SampleSet, sample_gaussian, scm_spectrum, toeplitz_model

__all__ = [
    "ExperimentConfig",
    "Result",
    "load_config",
    "run_histogram",
    "run_mse",
    "run_clustering",
    "run_estimate",
    "run_asymptotics",
    "run",
    "main",
]

KINDS = ("histogram", "mse", "clustering", "estimate", "asymptotics")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "histogram": {"rho": [0.8, 0.4], "c": [0.1, 0.5], "M": [40], "trials": 2000},
    "asymptotics": {"rho": [0.8, 0.4], "c": [0.1, 0.5], "M": [40], "trials": 1},
    "mse": {"rho": [0.3, 0.6], "c": [1 / 3], "M": [4, 8, 12, 16, 20, 24, 28, 32, 40, 48, 56, 64, 72, 80]},
    "clustering": {"rho": [0.3, 0.3, 0.6, 0.6, 0.9, 0.9], "c": [2 / 3], "M": [40], "metrics": ["KL"]},
    "estimate": {"rho": [0.3, 0.6], "c": [1 / 3], "M": [40], "trials": 1},
}


@dataclass
class ExperimentConfig:
    """Validated experiment description; see docs/config-schema.json."""

    kind: str
    rho: List[float] = field(default_factory=lambda: [0.8, 0.4])
    M: List[int] = field(default_factory=lambda: [40])
    c: Optional[List[float]] = None
    N: Optional[List[int]] = None
    profiles: Optional[List[List[float]]] = None
    pairs: Optional[List[List[int]]] = None
    metrics: List[str] = field(default_factory=lambda: ["EU", "KL", "LE"])
    estimators: List[str] = field(default_factory=lambda: ["consistent", "plugin"])
    trials: int = 1000
    seed: int = 0
    varsigma: int = 1
    grid: int = 101
    empirical: bool = True
    quadrature: Dict[str, float] = field(default_factory=lambda: {"rtol": 1e-10})
    data: Optional[List[str]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.M = [int(m) for m in np.atleast_1d(self.M)]
        self.rho = [float(r) for r in np.atleast_1d(self.rho)]
        self.metrics = [str(m).upper() for m in self.metrics]
        if any(m not in METRICS for m in self.metrics):
            raise ConfigError(f"metrics must be drawn from {sorted(METRICS)}")
        if any(e not in ("consistent", "plugin") for e in self.estimators):
            raise ConfigError("estimators must be 'consistent' or 'plugin'")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if any(b <= a for a, b in zip(self.M, self.M[1:])) or min(self.M) < 1:
            raise ConfigError("M list must be positive and strictly ascending")
        if self.varsigma not in (0, 1):
            raise ConfigError("varsigma must be 0 or 1")
        if self.c is None and self.N is None and self.kind != "estimate":
            raise ConfigError("either c or N must be given")
        if self.c is not None:
            self.c = [float(x) for x in np.atleast_1d(self.c)]
            if any(x <= 0 or x == 1 for x in self.c):
                raise ConfigError("every c must be positive and different from 1")
        for prof in self.profiles or []:
            if any(x <= 0 or x == 1 for x in prof):
                raise ConfigError("every c must be positive and different from 1")
        if self.grid < 2:
            raise ConfigError("grid needs at least two points")

    @property
    def rtol(self) -> float:
        return float(self.quadrature.get("rtol", 1e-10))

    def sample_counts(self, M: int, c: Optional[Sequence[float]] = None) -> List[int]:
        """Per-model N: explicit N list if given, else round(M / c_j) with c broadcast over models."""
        J = len(self.rho)
        if self.N is not None:
            N = list(np.broadcast_to(np.asarray(self.N, dtype=int), (J,)))
            return [int(n) for n in N]
        c = np.broadcast_to(np.asarray(c if c is not None else self.c, dtype=float), (J,))
        return [int(round(M / cj)) for cj in c]


def _config_error_from_json(path: str, exc: json.JSONDecodeError) -> ConfigError:
    return ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")


def load_config(path: Optional[str], kind: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config (may be absent), apply kind defaults, then overrides."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise _config_error_from_json(path, exc) from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}:1:1: top-level value must be an object")
    if raw.get("kind", kind) != kind:
        raise ConfigError(f"config kind {raw['kind']!r} does not match subcommand {kind!r}")
    merged = dict(DEFAULTS.get(kind, {}))
    merged.update(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    merged["kind"] = kind
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"{path or '<args>'}: unknown config keys {unknown}")
    try:
        return ExperimentConfig(**merged)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path or '<args>'}: {exc}") from exc


@dataclass
class Result:
    """A flat table of rows plus optional nested payload for JSON output."""

    kind: str
    rows: List[Dict[str, Any]]
    payload: Dict[str, Any] = field(default_factory=dict)

    def to_csv(self) -> str:
        cols: List[str] = []
        for r in self.rows:
            cols.extend(k for k in r if k not in cols)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, restval="", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        body = {"kind": self.kind, "rows": self.rows, **self.payload}
        return json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _provenance(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {"seed": cfg.seed, "trials": cfg.trials, "rtol": cfg.rtol, "version": __version__}


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("COVDIST_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ConfigError(f"COVDIST_THREADS must be an integer, got {env!r}") from exc
        else:
            threads = 1
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return threads


def _trial_seeds(seed: int, point: int, trials: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed, spawn_key=(point,)).spawn(trials)


def _map_trials(fn: Callable[[np.random.SeedSequence], Any], seeds, threads: int) -> List[Any]:
    """Evaluate fn per seed; results are returned in seed order."""
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def _pair_models(cfg: ExperimentConfig, M: int):
    if len(cfg.rho) != 2:
        raise ConfigError(f"{cfg.kind} needs exactly two correlation values")
    return [toeplitz_model(r, M, cfg.varsigma) for r in cfg.rho]


def _draw_pair_distances(models, N, metrics, kinds, varsigma):
    def one(ss):
        rng = np.random.default_rng(ss)
        s = [scm_spectrum(sample_gaussian(m, n, rng)) for m, n in zip(models, N)]
        out = {}
        for met in metrics:
            if "consistent" in kinds:
                out[(met, "consistent")] = consistent_distance(s[0], s[1], met).value
            if "plugin" in kinds:
                out[(met, "plugin")] = plugin_distance(s[0], s[1], met).value
        return out

    return one


def run_histogram(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Empirical distribution of the consistent estimators against the Gaussian limit."""
    rows, series = [], []
    for p, M in enumerate(cfg.M):
        models = _pair_models(cfg, M)
        N = cfg.sample_counts(M)
        draws = _map_trials(
            _draw_pair_distances(models, N, cfg.metrics, ("consistent",), cfg.varsigma),
            _trial_seeds(cfg.seed, p, cfg.trials),
            threads,
        )
        for met in cfg.metrics:
            law = asymptotic_law(PairSystem(models, N, [(0, 1)], met, cfg.varsigma), rtol=cfg.rtol)
            x = np.array([d[(met, "consistent")] for d in draws])
            loc, scale = float(law.loc[0]), float(law.scale[0])
            ks = stats.kstest(x, stats.norm(loc, scale).cdf)
            rows.append(
                {
                    "record": "summary",
                    "metric": met,
                    "M": M,
                    "N1": N[0],
                    "N2": N[1],
                    "d": float(law.d[0]),
                    "mean": float(law.mean[0]),
                    "var": float(law.cov[0, 0]),
                    "loc": loc,
                    "scale": scale,
                    "sample_mean": float(x.mean()),
                    "sample_sd": float(x.std(ddof=1)),
                    "ks": float(ks.statistic),
                    **_provenance(cfg),
                }
            )
            grid = np.linspace(loc - 4 * scale, loc + 4 * scale, cfg.grid)
            series.append({"metric": met, "M": M, "samples": x, "grid": grid, "pdf": stats.norm(loc, scale).pdf(grid)})
    return Result("histogram", rows, {"series": series})


def run_mse(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Normalized (or absolute when d = 0) mean squared error versus M at fixed c."""
    rows = []
    for p, M in enumerate(cfg.M):
        models = _pair_models(cfg, M)
        N = cfg.sample_counts(M)
        draws = _map_trials(
            _draw_pair_distances(models, N, cfg.metrics, cfg.estimators, cfg.varsigma),
            _trial_seeds(cfg.seed, p, cfg.trials),
            threads,
        )
        for met in cfg.metrics:
            d = true_distance(models[0], models[1], met)
            normalized = abs(d) > 1e-12
            for kind in cfg.estimators:
                x = np.array([t[(met, kind)] for t in draws])
                err = (x - d) / d if normalized else x
                sq = err**2
                rows.append(
                    {
                        "metric": met,
                        "estimator": kind,
                        "M": M,
                        "N1": N[0],
                        "N2": N[1],
                        "d": d,
                        "normalized": normalized,
                        "mse": float(sq.mean()),
                        "mse_se": float(sq.std(ddof=1) / np.sqrt(len(sq))) if len(sq) > 1 else float("nan"),
                        **_provenance(cfg),
                    }
                )
    return Result("mse", rows)


def _groups_from_rho(rho: Sequence[float]) -> List[int]:
    labels: Dict[float, int] = {}
    return [labels.setdefault(r, len(labels)) for r in rho]


def _expand_profile(profile: Sequence[float], groups: Sequence[int]) -> List[float]:
    prof = list(profile)
    if len(prof) == 1:
        return prof * len(groups)
    if len(prof) == len(groups):
        return prof
    if len(prof) == max(groups) + 1:
        return [prof[g] for g in groups]
    raise ConfigError("a c-profile needs one value, one per group or one per model")


def run_clustering(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Gaussian-approximation and empirical probability of correct clustering."""
    groups = _groups_from_rho(cfg.rho)
    profiles = cfg.profiles or [cfg.c]
    rows = []
    point = 0
    for met in cfg.metrics:
        for prof in profiles:
            cj = _expand_profile(prof, groups)
            for M in cfg.M:
                sc = ClusteringScenario.toeplitz(cfg.rho, M, cj, met, cfg.varsigma)
                law = asymptotic_law(sc.system(), rtol=cfg.rtol)
                theory = success_probability(law, sc, seed=cfg.seed)
                row = {
                    "metric": met,
                    "M": M,
                    "c_profile": "/".join(f"{x:.6g}" for x in cj),
                    "theory": theory.value,
                    "theory_se": theory.error,
                }
                if cfg.empirical:
                    kind = cfg.estimators[0]
                    emp = empirical_success(
                        sc, cfg.trials, kind, seed=_point_seed(cfg.seed, point), threads=threads
                    )
                    half = 1.96 * emp.error
                    row.update(
                        {
                            "estimator": kind,
                            "empirical": emp.value,
                            "empirical_se": emp.error,
                            "ci_low": max(emp.value - half, 0.0),
                            "ci_high": min(emp.value + half, 1.0),
                        }
                    )
                row.update(_provenance(cfg))
                rows.append(row)
                point += 1
    return Result("clustering", rows)


def _point_seed(seed: int, point: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(point,)).generate_state(1, np.uint64)[0])


def _load_matrix(path: str) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix == ".npy":
            Y = np.load(p)
        else:
            Y = np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None, dtype=complex if "j" in p.read_text() else float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot read data matrix ({exc})") from exc
    if Y.ndim != 2:
        raise ConfigError(f"{path}: data must be an M-by-N matrix")
    return Y


def run_estimate(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Plug-in and consistent estimates from two data sets (files or generated)."""
    if cfg.data:
        if len(cfg.data) != 2:
            raise ConfigError("estimate needs exactly two data files")
        sets = [_load_matrix(p) for p in cfg.data]
        models = None
        M = sets[0].shape[0]
        if sets[1].shape[0] != M:
            raise ConfigError("data sets must share the row dimension M")
        spectra = [scm_spectrum(SampleSet(Y)) for Y in sets]
        N = [Y.shape[1] for Y in sets]
    else:
        M = cfg.M[0]
        models = _pair_models(cfg, M)
        N = cfg.sample_counts(M)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        spectra = [scm_spectrum(sample_gaussian(m, n, rng)) for m, n in zip(models, N)]
    rows = []
    for met in cfg.metrics:
        row: Dict[str, Any] = {"metric": met, "M": M, "N1": N[0], "N2": N[1]}
        row["plugin"] = plugin_distance(spectra[0], spectra[1], met).value
        try:
            row["consistent"] = consistent_distance(spectra[0], spectra[1], met).value
        except ValueError as exc:
            row["consistent"] = None
            row["note"] = str(exc)
        row["true"] = true_distance(models[0], models[1], met) if models else None
        row.update(_provenance(cfg))
        rows.append(row)
    return Result("estimate", rows)


def run_asymptotics(cfg: ExperimentConfig, threads: int = 1) -> Result:
    """Limit-law descriptors (d, mean, covariance) for every metric and M."""
    rows, laws = [], []
    pairs = [tuple(p) for p in (cfg.pairs or [[0, 1]])]
    for M in cfg.M:
        models = [toeplitz_model(r, M, cfg.varsigma) for r in cfg.rho]
        N = cfg.sample_counts(M)
        for met in cfg.metrics:
            law = asymptotic_law(PairSystem(models, N, pairs, met, cfg.varsigma), rtol=cfg.rtol)
            for r, (i, j) in enumerate(pairs):
                rows.append(
                    {
                        "metric": met,
                        "M": M,
                        "pair": f"{i}-{j}",
                        "d": float(law.d[r]),
                        "mean": float(law.mean[r]),
                        "var": float(law.cov[r, r]),
                        **_provenance(cfg),
                    }
                )
            laws.append({"metric": met, "M": M, "pairs": pairs, "cov": law.cov})
    return Result("asymptotics", rows, {"laws": laws})


RUNNERS = {
    "histogram": run_histogram,
    "mse": run_mse,
    "clustering": run_clustering,
    "estimate": run_estimate,
    "asymptotics": run_asymptotics,
}


def run(cfg: ExperimentConfig, threads: int = 1) -> Result:
    return RUNNERS[cfg.kind](cfg, threads)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--threads", type=int, help="worker threads (default: $COVDIST_THREADS or 1)")
    common.add_argument("--metric", action="append", help="metric to include (repeatable)")
    common.add_argument("--varsigma", type=int, choices=(0, 1), help="1 for real data, 0 for complex")

    p = argparse.ArgumentParser(prog="covdist", description="Covariance distance estimation experiments.")
    p.add_argument("--version", action="version", version=f"covdist {__version__}")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, parents=[common], help=RUNNERS[kind].__doc__.splitlines()[0])
        if kind == "estimate":
            sp.add_argument("--rho1", type=float)
            sp.add_argument("--rho2", type=float)
            sp.add_argument("--M", type=int)
            sp.add_argument("--N1", type=int)
            sp.add_argument("--N2", type=int)
            sp.add_argument("--data", nargs=2, metavar=("FILE1", "FILE2"), help="M-by-N data matrices")
    return p


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "seed": args.seed,
        "trials": args.trials,
        "metrics": args.metric,
        "varsigma": args.varsigma,
    }
    if args.kind == "estimate":
        if args.rho1 is not None or args.rho2 is not None:
            if args.rho1 is None or args.rho2 is None:
                raise ConfigError("--rho1 and --rho2 go together")
            out["rho"] = [args.rho1, args.rho2]
        if args.M is not None:
            out["M"] = [args.M]
        if args.N1 is not None or args.N2 is not None:
            if args.N1 is None or args.N2 is None:
                raise ConfigError("--N1 and --N2 go together")
            out["N"] = [args.N1, args.N2]
        out["data"] = args.data
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind, _overrides(args))
        threads = _resolve_threads(args.threads)
        result = run(cfg, threads)
        fmt = args.format or ("json" if args.kind == "estimate" else "csv")
        text = result.to_json() if fmt == "json" else result.to_csv()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    except (ConfigError, OSError) as exc:
        print(f"covdist: configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"covdist: numerical failure: {exc}", file=sys.stderr)
        return 2
    except CovdistError as exc:
        print(f"covdist: {exc}", file=sys.stderr)
        return 1
