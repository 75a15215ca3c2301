"""Experiment harness: config files in, CSV/JSON artifacts out.

A config is a TOML file with [dataset], [partition], [model], and [fed]
tables, an optional stepsize grid, and optional [[cells]] overriding fed
fields (or the partition alpha) per experiment cell.  Every (cell, gamma)
pair becomes one run whose record lands in <output_dir>/<stem>.csv plus a
sibling .json echoing the configuration and summary.  Cells are independent
and may execute in parallel; artifacts are written atomically.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
import threading
from dataclasses import asdict, dataclass, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import fed, models
from .compressors import KINDS as COMPRESSOR_KINDS
from .compressors import CompressorSpec
from .core import derive_stream
from .data import FederatedDataset, PartitionSpec, attach_test, dirichlet_partition, load_idx, synth_classification, write_partition_stats

DATASET_KINDS = ("synth", "mnist_idx")

_FED_KEYS = {
    "algorithm",
    "variant",
    "sample_size",
    "p",
    "gamma",
    "iterations",
    "batch_size",
    "tau",
    "seed",
    "local_steps_baseline",
    "eval_every",
    "compressor",
}
_CELL_KEYS = _FED_KEYS | {"label", "alpha"}
_MNIST_PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


class ConfigError(ValueError):
    """Invalid experiment configuration, message names the offending keys."""


@dataclass(frozen=True)
class CellJob:
    """One fully resolved run: label, stepsize, partition alpha, fed config."""

    label: str
    stem: str
    gamma: float
    alpha: float
    fed_config: fed.FedConfig


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    output_dir: str
    dataset: dict
    n_clients: int
    alpha: float
    model: dict
    base_fed: fed.FedConfig
    grid: tuple[float, ...]
    cells: tuple[dict, ...]
    config_dir: str


def _check_number(raw: dict, table: str, key: str, out: list[str], *, required=True, integer=False, minimum=None, strict_min=None, maximum=None):
    if key not in raw:
        if required:
            out.append(f"{table}.{key}: missing")
        return None
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (integer and not isinstance(value, int)):
        out.append(f"{table}.{key}: expected {'an integer' if integer else 'a number'}, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        out.append(f"{table}.{key}: must be >= {minimum}, got {value}")
    if strict_min is not None and value <= strict_min:
        out.append(f"{table}.{key}: must be > {strict_min}, got {value}")
    if maximum is not None and value > maximum:
        out.append(f"{table}.{key}: must be <= {maximum}, got {value}")
    return value


def _validate_compressor(raw, table: str, out: list[str]) -> None:
    if not isinstance(raw, dict):
        out.append(f"{table}: expected a table, got {raw!r}")
        return
    kind = raw.get("kind", "identity")
    if kind not in COMPRESSOR_KINDS:
        out.append(f"{table}.kind: unknown {kind!r}, expected one of {COMPRESSOR_KINDS}")
    _check_number(raw, table, "density", out, required=False, strict_min=0.0, maximum=1.0)
    _check_number(raw, table, "bits", out, required=False, integer=True, minimum=1, maximum=31)
    unknown = set(raw) - {"kind", "density", "bits"}
    for key in sorted(unknown):
        out.append(f"{table}.{key}: unknown key")


def _validate_dataset(raw, out: list[str]) -> None:
    if not isinstance(raw, dict):
        out.append("dataset: expected a table")
        return
    kind = raw.get("kind")
    if kind not in DATASET_KINDS:
        out.append(f"dataset.kind: expected one of {DATASET_KINDS}, got {kind!r}")
        return
    if kind == "synth":
        n = _check_number(raw, "dataset", "n", out, integer=True, minimum=2)
        _check_number(raw, "dataset", "features", out, integer=True, minimum=1)
        classes = _check_number(raw, "dataset", "classes", out, integer=True, minimum=2)
        _check_number(raw, "dataset", "margin", out, strict_min=0.0)
        if n is not None and classes is not None and n < classes:
            out.append(f"dataset.n: must be >= dataset.classes, got {n} < {classes}")
    else:
        for key in _MNIST_PATH_KEYS:
            if not isinstance(raw.get(key), str):
                out.append(f"dataset.{key}: expected a file path string")


def _validate_model(raw, out: list[str]) -> None:
    if not isinstance(raw, dict):
        out.append("model: expected a table")
        return
    kind = raw.get("kind")
    if kind not in models.KINDS:
        out.append(f"model.kind: expected one of {models.KINDS}, got {kind!r}")
    if kind == "mlp":
        hidden = raw.get("hidden", [128, 64])
        if not (isinstance(hidden, list) and len(hidden) == 2 and all(isinstance(h, int) and h >= 1 for h in hidden)):
            out.append(f"model.hidden: expected two positive integers, got {hidden!r}")
    _check_number(raw, "model", "l2_reg", out, required=False, minimum=0.0)


def _validate_fed_types(raw: dict, table: str, out: list[str]) -> bool:
    """Structural check of one fed-style table; True iff it can be coerced."""
    before = len(out)
    for key in sorted(set(raw) - (_CELL_KEYS if table.startswith("cells") else _FED_KEYS)):
        out.append(f"{table}.{key}: unknown key")
    for key in ("algorithm", "variant"):
        if key in raw and not isinstance(raw[key], str):
            out.append(f"{table}.{key}: expected a string, got {raw[key]!r}")
    for key in ("p", "gamma", "tau"):
        _check_number(raw, table, key, out, required=False)
    for key in ("sample_size", "iterations", "batch_size", "seed", "local_steps_baseline", "eval_every"):
        _check_number(raw, table, key, out, required=False, integer=True)
    if "compressor" in raw:
        _validate_compressor(raw["compressor"], f"{table}.compressor", out)
    return len(out) == before


def validate_config(raw: dict) -> list[str]:
    """All invariant violations in a parsed config; empty list iff valid."""
    out: list[str] = []
    if not isinstance(raw, dict):
        return ["config: expected a table at top level"]
    for table in ("dataset", "partition", "model", "fed"):
        if table not in raw:
            out.append(f"{table}: missing table")
    _validate_dataset(raw.get("dataset", {}), out)
    partition = raw.get("partition", {})
    n_clients = None
    if isinstance(partition, dict):
        n_clients = _check_number(partition, "partition", "n_clients", out, integer=True, minimum=1)
        _check_number(partition, "partition", "alpha", out, strict_min=0.0)
    else:
        out.append("partition: expected a table")
    _validate_model(raw.get("model", {}), out)

    fed_raw = raw.get("fed", {})
    if not isinstance(fed_raw, dict):
        out.append("fed: expected a table")
        fed_raw = {}
        fed_ok = False
    else:
        fed_ok = _validate_fed_types(fed_raw, "fed", out)
    grid = raw.get("grid", [])
    if not (isinstance(grid, list) and all(isinstance(g, (int, float)) and not isinstance(g, bool) and g > 0 for g in grid)):
        out.append(f"grid: expected a list of positive stepsizes, got {grid!r}")

    cells = raw.get("cells", [])
    if not isinstance(cells, list):
        out.append("cells: expected an array of tables")
        cells = []
    buildable = fed_ok and isinstance(n_clients, int) and n_clients >= 1
    if buildable:
        out.extend(fed.config_violations(_build_fed(fed_raw, n_clients)))

    labels = set()
    for pos, cell in enumerate(cells):
        where = f"cells[{pos}]"
        if not isinstance(cell, dict):
            out.append(f"{where}: expected a table")
            continue
        label = cell.get("label")
        if not isinstance(label, str) or not label or not all(ch.isalnum() or ch in "._-" for ch in label):
            out.append(f"{where}.label: expected a file-safe name, got {label!r}")
        elif label in labels:
            out.append(f"{where}.label: duplicate label {label!r}")
        else:
            labels.add(label)
            where = f"cells[{label}]"
        cell_ok = _validate_fed_types({k: v for k, v in cell.items() if k != "label"}, where, out)
        if "alpha" in cell:
            _check_number(cell, where, "alpha", out, strict_min=0.0)
        if buildable and cell_ok:
            merged = _build_fed(_merge_cell(fed_raw, cell), n_clients)
            out.extend(f"{where}.{v}" for v in fed.config_violations(merged))
    return out


def _build_compressor(raw: dict) -> CompressorSpec:
    return CompressorSpec(
        kind=raw.get("kind", "identity"),
        density=float(raw.get("density", 1.0)),
        bits=int(raw.get("bits", 8)),
    )


def _build_fed(raw: dict, n_clients: int) -> fed.FedConfig:
    defaults = fed.FedConfig()
    return fed.FedConfig(
        algorithm=raw.get("algorithm", defaults.algorithm),
        variant=raw.get("variant", defaults.variant),
        n_clients=n_clients,
        sample_size=int(raw.get("sample_size", defaults.sample_size)),
        p=float(raw.get("p", defaults.p)),
        gamma=float(raw.get("gamma", defaults.gamma)),
        T=int(raw.get("iterations", defaults.T)),
        compressor=_build_compressor(raw.get("compressor", {})),
        tau=float(raw.get("tau", defaults.tau)),
        seed=int(raw.get("seed", defaults.seed)),
        batch_size=int(raw.get("batch_size", defaults.batch_size)),
        local_steps_baseline=int(raw.get("local_steps_baseline", defaults.local_steps_baseline)),
        eval_every=int(raw.get("eval_every", defaults.eval_every)),
    )


def _merge_cell(fed_raw: dict, cell: dict) -> dict:
    merged = dict(fed_raw)
    for key, value in cell.items():
        if key in _FED_KEYS:
            merged[key] = value
    return merged


def load_config(path, seed_override: int | None = None, out_override: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if seed_override is not None:
        raw.setdefault("fed", {})["seed"] = seed_override
    violations = validate_config(raw)
    if violations:
        raise ConfigError(f"{path}: " + "; ".join(violations))
    name = raw.get("name", path.stem)
    output_dir = out_override or raw.get("output_dir", os.path.join("out", name))
    return ExperimentConfig(
        name=name,
        output_dir=str(output_dir),
        dataset=raw["dataset"],
        n_clients=raw["partition"]["n_clients"],
        alpha=float(raw["partition"]["alpha"]),
        model=raw["model"],
        base_fed=_build_fed(raw["fed"], raw["partition"]["n_clients"]),
        grid=tuple(float(g) for g in raw.get("grid", [])),
        cells=tuple(raw.get("cells", [])),
        config_dir=str(path.parent),
    )


def expand_jobs(exp: ExperimentConfig) -> list[CellJob]:
    """(cell x gamma) grid: every cell override combined with every grid stepsize."""
    cell_specs: list[tuple[str, float, fed.FedConfig]] = []
    if exp.cells:
        fed_raw = _fed_as_raw(exp.base_fed)
        for cell in exp.cells:
            merged = _build_fed(_merge_cell(fed_raw, cell), exp.n_clients)
            cell_specs.append((cell["label"], float(cell.get("alpha", exp.alpha)), merged))
    else:
        cell_specs.append((exp.base_fed.algorithm, exp.alpha, exp.base_fed))
    jobs = []
    for label, alpha, config in cell_specs:
        gammas = exp.grid or (config.gamma,)
        for gamma in gammas:
            stem = label if not exp.grid else f"{label}__gamma{gamma:g}"
            jobs.append(CellJob(label=label, stem=stem, gamma=float(gamma), alpha=alpha, fed_config=replace(config, gamma=float(gamma))))
    return jobs


def _fed_as_raw(config: fed.FedConfig) -> dict:
    raw = asdict(config)
    raw["iterations"] = raw.pop("T")
    raw.pop("n_clients")
    return raw


class _DatasetCache:
    """Per-experiment cache of built datasets, keyed by (alpha, seed)."""

    def __init__(self, exp: ExperimentConfig):
        self.exp = exp
        self._lock = threading.Lock()
        self._cache: dict[tuple[float, int], FederatedDataset] = {}

    def get(self, alpha: float, seed: int) -> FederatedDataset:
        key = (alpha, seed)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = _build_dataset(self.exp, alpha, seed)
            return self._cache[key]


def _build_dataset(exp: ExperimentConfig, alpha: float, seed: int) -> FederatedDataset:
    cfg = exp.dataset
    if cfg["kind"] == "synth":
        ds = synth_classification(
            n=cfg["n"],
            n_features=cfg["features"],
            n_classes=cfg["classes"],
            margin=cfg["margin"],
            rng=derive_stream(seed, "synth"),
        )
    else:
        paths = {key: os.path.join(exp.config_dir, cfg[key]) for key in _MNIST_PATH_KEYS}
        ds = attach_test(
            load_idx(paths["train_images"], paths["train_labels"]),
            load_idx(paths["test_images"], paths["test_labels"]),
        )
    spec = PartitionSpec(n_clients=exp.n_clients, alpha=alpha, rng=derive_stream(seed, "partition"))
    partition = dirichlet_partition(ds.labels, spec)
    return replace(ds, partition=partition)


def _build_model_spec(exp: ExperimentConfig, dataset: FederatedDataset) -> models.ModelSpec:
    n_features = dataset.features.shape[1]
    if exp.model["kind"] == "logreg":
        sizes = (n_features, dataset.n_classes)
    else:
        hidden = exp.model.get("hidden", [128, 64])
        sizes = (n_features, hidden[0], hidden[1], dataset.n_classes)
    return models.ModelSpec(kind=exp.model["kind"], layer_sizes=sizes, l2_reg=float(exp.model.get("l2_reg", 0.0)))


def _job_echo(exp: ExperimentConfig, job: CellJob) -> dict:
    return {
        "name": exp.name,
        "cell": job.label,
        "gamma": job.gamma,
        "dataset": dict(exp.dataset),
        "partition": {"n_clients": exp.n_clients, "alpha": job.alpha},
        "model": dict(exp.model),
        "fed": asdict(job.fed_config),
        "seed": job.fed_config.seed,
    }


def _run_job(exp: ExperimentConfig, job: CellJob, cache: _DatasetCache) -> dict:
    dataset = cache.get(job.alpha, job.fed_config.seed)
    spec = _build_model_spec(exp, dataset)
    result = fed.run(job.fed_config, dataset, spec)
    result.record.config = _job_echo(exp, job)
    out = Path(exp.output_dir)
    result.record.write_csv(out / f"{job.stem}.csv")
    result.record.write_json(out / f"{job.stem}.json")
    summary = result.record.summary()
    summary["cell"] = job.label
    summary["gamma"] = job.gamma
    return summary


def run_experiment(
    config_path,
    seed: int | None = None,
    out: str | None = None,
    quiet: bool = False,
    workers: int = 1,
) -> int:
    """Run every cell of the experiment; 0 iff all cells completed."""
    exp = load_config(config_path, seed_override=seed, out_override=out)
    jobs = expand_jobs(exp)
    os.makedirs(exp.output_dir, exist_ok=True)
    cache = _DatasetCache(exp)

    summaries: list[dict] = []
    failures: list[str] = []

    for alpha, seed_value in sorted({(job.alpha, job.fed_config.seed) for job in jobs}):
        stats_path = Path(exp.output_dir) / f"partition_stats_alpha{alpha:g}_seed{seed_value}.csv"
        try:
            write_partition_stats(cache.get(alpha, seed_value), stats_path)
        except Exception as exc:  # noqa: BLE001 - dataset errors surface per cell below
            failures.append(f"partition stats for alpha={alpha:g}, seed={seed_value} failed: {exc}")

    def _execute(job: CellJob):
        try:
            summaries.append(_run_job(exp, job, cache))
        except Exception as exc:  # noqa: BLE001 - cell failures are reported, not fatal
            failures.append(f"cell {job.stem} failed: {exc}")

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_execute, jobs))
    else:
        for job in jobs:
            _execute(job)

    if not quiet:
        _print_summary(exp, summaries)
    for failure in failures:
        print(failure, file=sys.stderr)
    return 1 if failures else 0


def _print_summary(exp: ExperimentConfig, summaries: list[dict]) -> None:
    print(f"experiment {exp.name}: {len(summaries)} cell(s) -> {exp.output_dir}")
    header = f"{'cell':<24} {'gamma':>8} {'best_acc':>9} {'final_loss':>11} {'comm':>6} {'uplink_bits':>12}"
    print(header)
    for s in sorted(summaries, key=lambda s: (s['cell'], s['gamma'])):
        print(
            f"{s['cell']:<24} {s['gamma']:>8g} {s['best_accuracy']:>9.4f} "
            f"{s['final_loss']:>11.4f} {s['comm_rounds']:>6} {s['uplink_bits']:>12}"
        )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedcomloc",
        description="Run communication-efficient federated training experiments from a TOML config.",
    )
    parser.add_argument("--config", required=True, help="path to the experiment TOML file")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary table")
    parser.add_argument("--workers", type=int, default=1, help="parallel experiment cells")
    args = parser.parse_args(argv)
    try:
        return run_experiment(args.config, seed=args.seed, out=args.out, quiet=args.quiet, workers=args.workers)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
