"""Command-line experiment runner.

Subcommands:
  search  run one method (gea | rea | rs) for several seeds; write one
          SearchResult JSON per seed plus an aggregate report.
  sweep   run gea and rea across a list of C budgets and all seeds; write
          a CSV of per-run bests for plotting budget curves.
  report  aggregate per-seed SearchResult JSONs into a mean +/- std table,
          one row per method, one column group per dataset.

Every knob can come from a flat key=value config file, with command-line
flags overriding file values. All randomness flows from the declared seeds,
so reruns of the same config reproduce every result byte for byte except
the "timing" sections, which hold wall-clock measurements.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .benchmark_store import (
    INTERACTION_SCALE_DEFAULT,
    JsonlFormatError,
    NoisyProxySource,
    OracleProxySource,
    SyntheticLandscape,
    load_jsonl,
)
from .guided_evolution import (
    EvolutionConfig,
    SearchResult,
    run_random_baseline,
    run_rea_baseline,
    run_search,
)
from .network_builder import SkeletonConfig
from .zero_proxy import (
    BatchFileError,
    JacobianProxySource,
    ProxyConfig,
    make_batch,
    read_batch_file,
)

METHODS = ("gea", "rea", "rs")
MODES = ("proxy", "mock", "oracle")


class CliError(Exception):
    """Configuration or input problem surfaced to the user with exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Flattened experiment description; see the module docstring for flags."""

    method: str = "gea"
    mode: str = "oracle"
    fitness: str = "synthetic"
    landscape_seed: int = 0
    interaction_scale: float = INTERACTION_SCALE_DEFAULT
    bench_path: str | None = None
    dataset: str | None = None
    C: int = 150
    P: int = 5
    S: int = 2
    seeds: tuple[int, ...] = (0,)
    rho: float | None = None
    t: float = 1e-5
    tau: int = 100
    batch_size: int = 32
    batch_file: str | None = None
    in_channels: int = 3
    image_hw: int = 8
    stem_channels: int = 8
    num_stages: int = 1
    cells_per_stage: int = 1
    num_classes: int = 10
    out: str | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise CliError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mode not in MODES:
            raise CliError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fitness not in ("synthetic", "bench"):
            raise CliError(f"fitness must be 'synthetic' or 'bench', got {self.fitness!r}")
        if self.fitness == "bench" and not self.bench_path:
            raise CliError("fitness=bench requires --bench with a JSONL path")
        if self.fitness == "bench" and not self.dataset:
            raise CliError("fitness=bench requires --dataset")
        if self.mode == "mock" and self.rho is None:
            raise CliError("mode=mock requires --rho")
        if self.mode == "mock" and self.fitness != "synthetic":
            raise CliError("mode=mock calibrates against a synthetic landscape; "
                           "use fitness=synthetic")
        if not self.seeds:
            raise CliError("need at least one seed")

    def skeleton(self) -> SkeletonConfig:
        return SkeletonConfig(in_channels=self.in_channels, image_hw=self.image_hw,
                              stem_channels=self.stem_channels, num_stages=self.num_stages,
                              cells_per_stage=self.cells_per_stage,
                              num_classes=self.num_classes)

    def proxy_config(self) -> ProxyConfig:
        source = "file" if self.batch_file else "synthetic"
        return ProxyConfig(t=self.t, tau=self.tau, batch_size=self.batch_size,
                           num_classes=self.num_classes, source=source,
                           batch_path=self.batch_file, skeleton=self.skeleton())


def _parse_config_file(path: str) -> dict:
    """key = value lines; values go through JSON, falling back to strings."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value
    return values


def _parse_seed_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise CliError(f"could not parse integer list from {text!r}") from None


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults <- config file <- command-line flags."""
    merged: dict = {}
    if args.config:
        file_values = _parse_config_file(args.config)
        known = {f.name for f in fields(RunConfig)} | {"num_seeds", "seed_base"}
        for key in file_values:
            if key not in known:
                raise CliError(f"unknown config key {key!r} in {args.config}")
        if "seeds" in file_values:
            v = file_values["seeds"]
            file_values["seeds"] = tuple(v) if isinstance(v, list) else _parse_seed_list(str(v))
        if "num_seeds" in file_values or "seed_base" in file_values:
            base = int(file_values.pop("seed_base", 0))
            count = int(file_values.pop("num_seeds", 1))
            file_values.setdefault("seeds", tuple(range(base, base + count)))
        merged.update(file_values)

    cli_values: dict = {}
    for f in fields(RunConfig):
        if f.name == "seeds":
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            cli_values[f.name] = value
    if getattr(args, "seeds", None) is not None:
        cli_values["seeds"] = _parse_seed_list(args.seeds)
    elif getattr(args, "num_seeds", None) is not None:
        base = getattr(args, "seed_base", None) or 0
        cli_values["seeds"] = tuple(range(base, base + args.num_seeds))

    config = replace(RunConfig(), **{**merged, **cli_values})
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Source wiring
# ---------------------------------------------------------------------------


def _fitness_source(config: RunConfig):
    """Returns (source, dataset name) for the requested fitness backend."""
    if config.fitness == "synthetic":
        return SyntheticLandscape(config.landscape_seed, config.interaction_scale), "synthetic"
    store = load_jsonl(config.bench_path)
    if config.dataset not in store.datasets:
        raise CliError(f"dataset {config.dataset!r} not present in {config.bench_path}")
    if not store.complete.get(config.dataset, False):
        raise CliError(f"store at {config.bench_path} is incomplete for "
                       f"{config.dataset!r}; the search may request any architecture")
    return store, config.dataset


def _proxy_source(config: RunConfig, fitness, dataset: str, seed: int):
    if config.mode == "oracle":
        return OracleProxySource(fitness, dataset)
    if config.mode == "mock":
        return NoisyProxySource(fitness, config.rho, seed)
    proxy_config = config.proxy_config()
    if proxy_config.source == "file":
        batch = read_batch_file(proxy_config.batch_path)
    else:
        batch_rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        batch = make_batch(proxy_config, batch_rng)
    return JacobianProxySource(batch, config.skeleton(), proxy_config)


def _run_one(config: RunConfig, fitness, dataset: str, seed: int,
             method: str, C: int | None = None) -> SearchResult:
    evo = EvolutionConfig(C=C if C is not None else config.C, P=config.P,
                          S=config.S, seed=seed, dataset=dataset)
    if method == "gea":
        proxy = _proxy_source(config, fitness, dataset, seed)
        return run_search(evo, proxy, fitness)
    if method == "rea":
        return run_rea_baseline(evo, fitness)
    return run_random_baseline(evo, fitness)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def mean_std(values) -> tuple[float, float]:
    """Arithmetic mean and sample (N-1) standard deviation; std 0 for N=1."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate_report(method: str, dataset: str, results: list[SearchResult]) -> dict:
    val_mean, val_std = mean_std([r.best.fitness for r in results])
    test_mean, test_std = mean_std([r.best.test_acc for r in results])
    train_mean, _ = mean_std([r.train_seconds_total for r in results])
    sim_mean, _ = mean_std([r.sim_time_seconds for r in results])
    return {
        "method": method,
        "dataset": dataset,
        "num_seeds": len(results),
        "per_seed": [{"seed": r.config.seed, "val_acc": r.best.fitness,
                      "test_acc": r.best.test_acc, "arch": str(r.best.arch),
                      "fitness_evals": r.num_fitness_evals,
                      "proxy_evals": r.num_proxy_evals} for r in results],
        "val_acc": {"mean": val_mean, "std": val_std},
        "test_acc": {"mean": test_mean, "std": test_std},
        "train_seconds_total": {"mean": train_mean},
        "timing": {"sim_time_seconds": {"mean": sim_mean},
                   "per_seed": [r.sim_time_seconds for r in results]},
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_search(config: RunConfig) -> int:
    if not config.out:
        raise CliError("search requires --out DIR for result files")
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fitness, dataset = _fitness_source(config)
    results = []
    for seed in config.seeds:
        result = _run_one(config, fitness, dataset, seed, config.method)
        results.append(result)
        _write_json(out_dir / f"{config.method}_seed{seed}.json", result.to_json_dict())
    _write_json(out_dir / f"{config.method}_report.json",
                aggregate_report(config.method, dataset, results))
    print(f"wrote {len(results)} result files and {config.method}_report.json to {out_dir}")
    return 0


def cmd_sweep(config: RunConfig, c_values: tuple[int, ...]) -> int:
    if len(c_values) < 2:
        raise CliError("sweep needs at least two C values")
    if not config.out:
        raise CliError("sweep requires --out FILE.csv")
    fitness, dataset = _fitness_source(config)
    out_path = Path(config.out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "C", "seed", "val_acc", "test_acc", "sim_time"])
        for c in c_values:
            for seed in config.seeds:
                for method in ("gea", "rea"):
                    r = _run_one(config, fitness, dataset, seed, method, C=c)
                    writer.writerow([method, c, seed, r.best.fitness,
                                     r.best.test_acc, r.sim_time_seconds])
    rows = 2 * len(c_values) * len(config.seeds)
    print(f"wrote {rows} sweep rows to {out_path}")
    return 0


def _load_result_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return {"method": doc["method"], "dataset": doc["config"]["dataset"],
                "val_acc": float(doc["best"]["val_acc"]),
                "test_acc": float(doc["best"]["test_acc"]),
                "sim_time": float(doc["timing"]["sim_time_seconds"])}
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: not a SearchResult JSON file ({exc})") from None


def cmd_report(result_files: list[str], out: str | None) -> int:
    rows = [_load_result_file(p) for p in result_files]
    methods = sorted({r["method"] for r in rows})
    datasets = sorted({r["dataset"] for r in rows})

    table: list[list[str]] = []
    header = ["method"]
    for ds in datasets:
        header += [f"{ds} time", f"{ds} val", f"{ds} test"]
    table.append(header)
    for method in methods:
        line = [method]
        for ds in datasets:
            group = [r for r in rows if r["method"] == method and r["dataset"] == ds]
            if not group:
                line += ["-", "-", "-"]
                continue
            time_mean, _ = mean_std([r["sim_time"] for r in group])
            val_mean, val_std = mean_std([r["val_acc"] for r in group])
            test_mean, test_std = mean_std([r["test_acc"] for r in group])
            line += [f"{time_mean:.2f}",
                     f"{val_mean:.2f}±{val_std:.2f}",
                     f"{test_mean:.2f}±{test_std:.2f}"]
        table.append(line)

    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    rendered = "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                         for row in table)
    print(rendered)
    if out:
        buf = io.StringIO()
        writer = csv.writer(buf)
        for row in table:
            writer.writerow(row)
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote report CSV to {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--mode", choices=MODES, help="proxy source for gea")
    p.add_argument("--fitness", choices=("synthetic", "bench"))
    p.add_argument("--landscape-seed", dest="landscape_seed", type=int)
    p.add_argument("--interaction-scale", dest="interaction_scale", type=float)
    p.add_argument("--bench", dest="bench_path", help="benchmark JSONL export")
    p.add_argument("--dataset")
    p.add_argument("--C", type=int, help="trained-model budget")
    p.add_argument("--P", type=int, help="population size / children per cycle")
    p.add_argument("--S", type=int, help="tournament sample size")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.add_argument("--seed-base", dest="seed_base", type=int)
    p.add_argument("--rho", type=float, help="target Spearman for mode=mock")
    p.add_argument("--t", type=float, help="log saturation constant")
    p.add_argument("--tau", type=int, help="class-count threshold")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--batch-file", dest="batch_file", help="raw batch tensor file")
    p.add_argument("--in-channels", dest="in_channels", type=int)
    p.add_argument("--image-hw", dest="image_hw", type=int)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.add_argument("--num-stages", dest="num_stages", type=int)
    p.add_argument("--cells-per-stage", dest="cells_per_stage", type=int)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--out", help="output directory (search) or file (sweep)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gea-nas",
                                     description="Guided evolutionary architecture search")
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run one method over several seeds")
    _add_run_flags(p_search)

    p_sweep = sub.add_parser("sweep", help="budget sweep of gea vs rea")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--c-values", dest="c_values", required=True,
                         help="comma-separated C budgets, at least two")

    p_report = sub.add_parser("report", help="aggregate result JSONs into a table")
    p_report.add_argument("files", nargs="+", help="SearchResult JSON files")
    p_report.add_argument("--out", help="also write the table as CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.files, args.out)
        config = build_run_config(args)
        if args.command == "search":
            return cmd_search(config)
        c_values = tuple(int(v) for v in _parse_seed_list(args.c_values))
        return cmd_sweep(config, c_values)
    except (CliError, JsonlFormatError, BatchFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def cli_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
