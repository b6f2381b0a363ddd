"""Command-line harness: ``ocets train | ablate | influence | cd | gen-fixture``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .config import ABLATION_AXES, ExperimentConfig
from .data import FixtureSpec, generate_fixture, write_csv
from .errors import ConfigError, InvalidInput, IoError, OcetsError, ParseError, PreconditionError, SingularMatrix
from .evaluate import SignificanceConfig, nemenyi_cd, rank_table
from .influence import (
    ClassificationInstance,
    RegressionInstance,
    max_prob_residual_norm,
    stability_region,
    theorem1_bounds,
    verify_sandwich,
)
from .model import save_checkpoint
from .numerics import make_rng
from .pipeline import load_table, run_cell

log = logging.getLogger("ocets")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3, 4

# ablation axis -> (sweep list attribute, config setter)
AXIS_SWEEPS = {
    "family": ("families", lambda c, v: setattr(c.tpt, "family", v)),
    "bins": ("bins", lambda c, v: setattr(c.tpt, "k", v)),
    "sigma": ("sigmas", lambda c, v: setattr(c.tpt, "sigma", v)),
    "lookback": ("lookbacks", None),
    "snr": ("snrs", lambda c, v: (setattr(c.noise, "snr_db", v), setattr(c.noise, "enabled", True))),
    "loss": ("losses", lambda c, v: setattr(c.loss, "kind", v)),
}

RESULT_COLUMNS = [
    "axis", "value", "dataset", "lookback", "horizon", "loss", "family", "k", "sigma", "snr_db",
    "seed", "status", "mse", "mae", "normalization", "persistence_mse", "persistence_mae",
    "realized_snr_db_min", "realized_snr_db_max", "run_dir", "error",
]


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _run_id(kind: str, cfg: ExperimentConfig, extra: str = "") -> str:
    digest = hashlib.sha256((cfg.dumps() + extra).encode()).hexdigest()[:12]
    return f"{kind}-{digest}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(obj):
    """Replace non-finite floats (e.g. an infinite SNR sentinel) with their string form."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OCETS_THREADS", "1")))
    except ValueError:
        raise ConfigError(f"OCETS_THREADS must be an integer, got {os.environ['OCETS_THREADS']!r}")


def _write_cell(result, cell_dir: Path, cfg: ExperimentConfig) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(result.metrics, cell_dir / "metrics.json")
    with (cell_dir / "train.log").open("w", encoding="utf-8") as fh:
        for rec in result.report.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(result.params, cell_dir / "checkpoint.json")
    with (cell_dir / "window_metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["window_id", "mse", "mae"])
        for i, (e2, e1) in enumerate(result.window_errors):
            wr.writerow([i, repr(float(e2)), repr(float(e1))])
    if cfg.eval.save_predictions:
        n = len(result.y_true)
        if cfg.eval.max_prediction_windows > 0:
            n = min(n, cfg.eval.max_prediction_windows)
        with (cell_dir / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["window_id", "step", "channel", "y_true", "y_pred"])
            for i in range(n):
                for s in range(result.y_true.shape[1]):
                    for c in range(result.y_true.shape[2]):
                        wr.writerow([i, s, c, repr(float(result.y_true[i, s, c])), repr(float(result.y_pred[i, s, c]))])


def _run_cells(cells, run_dir: Path, deterministic: bool) -> list[dict]:
    """Run (axis, value, cfg, lookback, horizon) cells; failures become error rows."""
    table_cache: dict[str, tuple] = {}

    def one(cell):
        axis, value, cfg, lookback, horizon = cell
        row = {
            "axis": axis, "value": value, "lookback": lookback, "horizon": horizon,
            "loss": cfg.loss.kind, "family": cfg.tpt.family, "k": cfg.tpt.k, "sigma": cfg.tpt.sigma,
            "snr_db": cfg.noise.snr_db if cfg.noise.enabled else "", "seed": cfg.seed,
        }
        name = f"{axis}={value}_w{lookback}_h{horizon}" if axis else f"w{lookback}_h{horizon}"
        cell_dir = run_dir / name
        try:
            key = cfg.data.path or json.dumps(dataclasses.asdict(cfg.fixture), sort_keys=True)
            if key not in table_cache:
                table_cache[key] = load_table(cfg)
            table, dataset = table_cache[key]
            row["dataset"] = dataset
            result = run_cell(cfg, lookback, horizon, table, dataset)
            _write_cell(result, cell_dir, cfg)
            m = result.metrics
            snr = m["realized_snr_db"]
            row.update(
                status="ok" if result.ok else "nonfinite",
                mse=m["mse"], mae=m["mae"], normalization=m["normalization"],
                persistence_mse=m["persistence_mse"], persistence_mae=m["persistence_mae"],
                realized_snr_db_min=min(snr) if snr else "", realized_snr_db_max=max(snr) if snr else "",
                run_dir=str(cell_dir.relative_to(run_dir)), error="",
            )
            log.info("%s: mse=%.6g mae=%.6g", name, m["mse"], m["mae"])
        except OcetsError as exc:
            log.error("%s failed: %s", name, exc)
            row.update(status=f"error:{type(exc).__name__}", error=str(exc), exit_code=exc.exit_code)
        return row

    workers = 1 if deterministic else _threads()
    if workers == 1:
        return [one(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, cells))


def _write_rows(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: r.get(k, "") for k in RESULT_COLUMNS})


def _manifest(cmd: str, cfg: ExperimentConfig, args, started: str, outputs: list[str], extra=None) -> dict:
    doc = {
        "command": cmd,
        "argv": sys.argv[1:],
        "config": _jsonable(cfg.to_dict()),
        "config_toml": cfg.dumps(),
        "seeds": {"global": cfg.seed, "noise": cfg.noise.seed},
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "deterministic": bool(args.deterministic),
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    return doc


def _sweep_exit(rows: list[dict]) -> int:
    codes = [r["exit_code"] for r in rows if "exit_code" in r]
    if rows and len(codes) == len(rows):
        return max(codes)
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    started = _now()
    run_dir = Path(args.out) / _run_id("train", cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    cells = [(None, None, cfg, w, h) for w in cfg.sweep.lookbacks for h in cfg.sweep.horizons]
    rows = _run_cells(cells, run_dir, args.deterministic)
    _write_rows(rows, run_dir / "results.csv")
    outputs = ["results.csv"] + [f"{r['run_dir']}/{f}" for r in rows if r.get("run_dir")
                                 for f in ("metrics.json", "train.log", "checkpoint.json", "window_metrics.csv")
                                 + (("predictions.csv",) if cfg.eval.save_predictions else ())]
    _dump_json(_manifest("train", cfg, args, started, outputs), run_dir / "manifest.json")
    print(run_dir)
    return _sweep_exit(rows)


def ablation_cells(cfg: ExperimentConfig, axis: str):
    if axis not in AXIS_SWEEPS:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    attr, setter = AXIS_SWEEPS[axis]
    base_lookback = cfg.sweep.lookbacks[0]
    cells = []
    for value in getattr(cfg.sweep, attr):
        for h in cfg.sweep.horizons:
            c = config_mod.from_dict(cfg.to_dict())
            if setter is not None:
                setter(c, value)
            lookback = value if axis == "lookback" else base_lookback
            cells.append((axis, value, c.validate(check_files=False), lookback, h))
    return cells


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    started = _now()
    run_dir = Path(args.out) / _run_id(f"ablate-{args.axis}", cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    rows = _run_cells(ablation_cells(cfg, args.axis), run_dir, args.deterministic)
    name = f"ablation_{args.axis}.csv"
    _write_rows(rows, run_dir / name)
    outputs = [name] + [f"{r['run_dir']}/metrics.json" for r in rows if r.get("run_dir")]
    _dump_json(_manifest("ablate", cfg, args, started, outputs, {"axis": args.axis}), run_dir / "manifest.json")
    print(run_dir)
    return _sweep_exit(rows)


def _instance_from_json(doc: dict):
    reg = RegressionInstance(doc["x"], doc["y"], doc["theta"], doc["sigma_x"])
    cls = ClassificationInstance(doc["x"], int(doc["label"]), doc["beta"], identifiable=doc.get("identifiable", True))
    p = doc.get("p_expected", cls.p_matrix)
    return reg, cls, np.asarray(p, dtype=float)


def cmd_influence(cfg: ExperimentConfig, args) -> int:
    started = _now()
    icfg = cfg.influence
    run_dir = Path(args.out) / _run_id("influence", cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg.seed, "influence")

    rows, violations = [], []
    skipped = 0
    if icfg.instances_path is not None:
        try:
            docs = json.loads(Path(icfg.instances_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{icfg.instances_path}: {exc}") from exc
        for i, doc in enumerate(docs):
            try:
                rep = theorem1_bounds(*_instance_from_json(doc))
            except (PreconditionError, SingularMatrix) as exc:
                log.warning("instance %d skipped: %s", i, exc)
                skipped += 1
                continue
            rows.append({"index": i, "source": "file", **rep.row()})
            if not rep.sandwich_holds:
                violations.append({"index": i, **doc, **rep.row()})
    if icfg.n_instances > 0:
        sweep = verify_sandwich(icfg.n_instances, rng, icfg.max_d, icfg.max_k)
        skipped += sweep.skipped
        rows.extend({"index": i, "source": "random", **r.row()} for i, r in enumerate(sweep.reports))
        violations.extend(sweep.violations)

    cols = ["index", "source", "ratio", "lower_bound", "upper_bound", "kappa2", "lambda_min_p",
            "lambda_max_p", "residual", "prob_residual_norm", "sandwich_holds"]
    with (run_dir / "influence_report.csv").open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        wr.writerows(rows)
    grid = stability_region(icfg.kappas, icfg.lambda_mins, icfg.residuals)
    with (run_dir / "stability_region.csv").open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(grid[0]))
        wr.writeheader()
        wr.writerows(grid)

    worst_norm = max_prob_residual_norm(icfg.residual_norm_samples, rng) if icfg.residual_norm_samples > 0 else None
    summary = {
        "instances": len(rows),
        "skipped": skipped,
        "violations": len(violations),
        "residual_norm_samples": icfg.residual_norm_samples,
        "max_prob_residual_norm": worst_norm,
        "residual_norm_holds": worst_norm is None or worst_norm <= math.sqrt(2.0),
    }
    _dump_json(summary, run_dir / "summary.json")
    outputs = ["influence_report.csv", "stability_region.csv", "summary.json"]
    if violations:
        _dump_json(violations, run_dir / "violations.json")
        outputs.append("violations.json")
    _dump_json(_manifest("influence", cfg, args, started, outputs), run_dir / "manifest.json")
    print(json.dumps(summary, sort_keys=True))
    if violations or not summary["residual_norm_holds"]:
        log.error("bound violated; offending instances in %s", run_dir / "violations.json")
        return EXIT_INVARIANT
    return EXIT_OK


def read_scores(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Score CSV: header of algorithm names, one row per dataset.

    A first column named ``dataset`` holds row labels.
    """
    p = Path(path)
    if not p.is_file():
        raise IoError(f"score file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ParseError(f"{p}: need a header and at least one dataset row")
    header = rows[0]
    labelled = header[0].strip().lower() == "dataset"
    algos = header[1:] if labelled else header
    datasets, values = [], []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{p}: {len(r)} cells, header has {len(header)}", row=i)
        datasets.append(r[0] if labelled else f"d{i - 1}")
        cells = r[1:] if labelled else r
        try:
            values.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{p}: {exc}", row=i) from exc
    if len(algos) < 2:
        raise InvalidInput("need at least two algorithms")
    return algos, datasets, np.array(values).T


def cmd_cd(cfg: ExperimentConfig, args) -> int:
    algos, datasets, scores = read_scores(args.scores)
    q_alpha = args.q_alpha if args.q_alpha is not None else cfg.eval.q_alpha
    ranks = rank_table(scores, lower_is_better=not args.higher_is_better)
    cd = nemenyi_cd(SignificanceConfig(len(algos), len(datasets), q_alpha))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranks_path = out / (Path(args.scores).stem + "_ranks.csv")
    with ranks_path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["algorithm", "average_rank"])
        for a, r in zip(algos, ranks):
            wr.writerow([a, repr(float(r))])
    print(f"CD = {cd!r}")
    return EXIT_OK


def cmd_gen_fixture(cfg: ExperimentConfig, args) -> int:
    fx = cfg.fixture
    spec = FixtureSpec(fx.n_rows, fx.periods, fx.amplitudes, fx.n_features, fx.offset, fx.trend, fx.noise_std)
    rng = make_rng(cfg.seed, "fixture") if fx.noise_std > 0 else None
    path = Path(args.path) if args.path else Path(args.out) / "fixture.csv"
    write_csv(generate_fixture(spec, rng), path)
    print(path)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "influence": cmd_influence,
    "cd": cmd_cd,
    "gen-fixture": cmd_gen_fixture,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set tpt.k=50 (repeatable)")
    common.add_argument("--out", help="output root (default: $OCETS_OUT or config out_dir)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--deterministic", action="store_true", help="run sweep cells serially")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ocets", description="Ordinal-classification time-series forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and evaluate each (lookback, horizon) pair")
    p = sub.add_parser("ablate", parents=[common], help="sweep one axis holding the rest at baseline")
    p.add_argument("axis", choices=ABLATION_AXES)
    sub.add_parser("influence", parents=[common], help="influence-ratio bound verification")
    p = sub.add_parser("cd", parents=[common], help="average ranks and Nemenyi critical distance")
    p.add_argument("scores", help="CSV with algorithm columns and dataset rows")
    p.add_argument("--q-alpha", type=float, help="Studentized range critical value (default eval.q_alpha)")
    p.add_argument("--higher-is-better", action="store_true")
    p = sub.add_parser("gen-fixture", parents=[common], help="write the synthetic multi-sine series as CSV")
    p.add_argument("path", nargs="?", help="output CSV (default <out>/fixture.csv)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = config_mod.load(args.config, overrides)
    if args.out is None:
        args.out = os.environ.get("OCETS_OUT") or cfg.out_dir
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except OcetsError as exc:
        print(f"ocets: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ocets: IoError: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
