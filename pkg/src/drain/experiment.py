"""Seeded experiment runs and multi-seed summaries.

Everything written here except ``timing.json`` is a pure function of the
config and seed, so re-running a command reproduces those files byte for byte.
"""

from __future__ import annotations

import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .baselines import train_baseline
from .config import DRAIN_METHOD, ExperimentConfig
from .data import build_domains, write_domain_csv
from .evaluation import evaluate
from .netgraph import save_param_vector
from .trainer import jsonl_sink, predict_future, save_model, train_sequence

log = logging.getLogger(__name__)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest(cfg: ExperimentConfig, seed: int) -> dict:
    return {
        "config_hash": cfg.config_hash(),
        "config": cfg.raw,
        "seed": seed,
        "versions": {"drain": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


def generate_data(cfg: ExperimentConfig, seed: int, out_dir: Path, force: bool = False) -> List[Path]:
    domains = build_domains(cfg.dataset, seed)
    out_dir = Path(out_dir)
    paths = [out_dir / f"domain_{k:02d}.csv" for k in sorted(domains)]
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise FileExistsError(f"{existing[0]} exists; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, p in zip(sorted(domains), paths):
        write_domain_csv(p, domains[k])
    return paths


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    """Train every configured method for one seed; write artifacts under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "metrics").mkdir(parents=True, exist_ok=True)
    domains = build_domains(cfg.dataset, seed)
    train = [domains[s] for s in cfg.dataset.train_domains]
    tcfg = cfg.train_config(seed)
    schema = cfg.schema
    results: Dict[str, dict] = {}
    timing: Dict[str, float] = {}
    for method in cfg.methods:
        t0 = time.perf_counter()
        with (out_dir / "metrics" / f"{method}.jsonl").open("w", encoding="utf-8") as fh:
            sink = jsonl_sink(fh)
            if method == DRAIN_METHOD:
                model = train_sequence(train, schema, cfg.generator, tcfg, sink)
                omega = predict_future(model)
                prefix = model.prefix_params
                train_omegas = model.omega_sequence
                save_model(out_dir / "drain_model.ckpt", model)
            else:
                bm = train_baseline(method, train, schema, tcfg, cfg.baselines, sink)
                omega, prefix = bm.omega, bm.prefix_params
                train_omegas = [omega.values] * len(train)
                if prefix.size:
                    np.save(out_dir / f"{method}_prefix.npy", prefix)
        timing[method] = time.perf_counter() - t0
        save_param_vector(out_dir / f"{method}_future.pv", omega)
        log.info("seed %d %s: training done, evaluating held-out domain %d", seed, method,
                 cfg.dataset.test_domain)
        test = domains[cfg.dataset.test_domain]
        results[method] = {
            "test": evaluate(schema, prefix, omega, test, tcfg.task),
            "train": [evaluate(schema, prefix, w, d, tcfg.task) for w, d in zip(train_omegas, train)],
        }
    _dump_json(out_dir / "results.json", {"seed": seed, "task": tcfg.task, "methods": results})
    _dump_json(out_dir / "manifest.json", manifest(cfg, seed))
    _dump_json(out_dir / "timing.json", {k: round(v, 3) for k, v in timing.items()})
    return {"seed": seed, "methods": results, "timing": timing}


def _run_seed_job(args):
    cfg, seed, out_dir = args
    return run_seed(cfg, seed, out_dir)


def summarize(cfg: ExperimentConfig, runs: List[dict]) -> dict:
    """Mean, sample std (n - 1 denominator) and median of the test metric."""
    runs = sorted(runs, key=lambda r: r["seed"])
    table = {}
    for method in cfg.methods:
        vals = np.array([r["methods"][method]["test"] for r in runs], dtype=np.float64)
        table[method] = {
            "values": vals.tolist(),
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "median": float(np.median(vals)),
            "n": int(len(vals)),
        }
    return {"name": cfg.name, "seeds": [r["seed"] for r in runs],
            "metric": "misclassification_pct" if cfg.train.task == "classification" else "mae",
            "methods": table}


def format_table(summary: dict) -> str:
    rows = [("Method", "mean ± std", "median", "n")]
    for method, s in summary["methods"].items():
        rows.append((method, f"{s['mean']:.2f} ± {s['std']:.2f}", f"{s['median']:.2f}", str(s["n"])))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [f"{summary['name']} ({summary['metric']}, seeds {summary['seeds']})"]
    for r in rows:
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def run_suite(cfg: ExperimentConfig, out_root: Path, workers: Optional[int] = None) -> dict:
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    jobs = [(cfg, seed, out_root / f"seed_{seed}") for seed in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_seed_job, jobs))
    else:
        runs = [_run_seed_job(j) for j in jobs]
    summary = summarize(cfg, runs)
    _dump_json(out_root / "summary.json", summary)
    (out_root / "summary.txt").write_text(format_table(summary), encoding="utf-8")
    return summary

