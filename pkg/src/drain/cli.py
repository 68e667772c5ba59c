"""Command-line driver: ``drain {gen-data,train,suite,boundary}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime or numeric
failure. ``DRAIN_OUTPUT_ROOT`` overrides the config's ``output_dir`` root.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional


from . import __version__
from .autodiff import NonFiniteError
from .config import ConfigError, ExperimentConfig, load_config
from .data import CSVFormatError, DatasetSpec, load_csv
from .evaluation import evaluate, render_boundary
from .experiment import format_table, generate_data, run_seed, run_suite
from .serialize import CheckpointError
from .trainer import TrainingDivergedError, load_model, predict_future

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ENV = "DRAIN_OUTPUT_ROOT"

log = logging.getLogger("drain")


def output_root(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / Path(cfg.output_dir).name
    return Path(cfg.output_dir)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = Path(args.out) if args.out else output_root(cfg, None) / "data" / f"seed_{seed}"
    paths = generate_data(cfg, seed, out, force=args.force)
    print(f"wrote {len(paths)} domain files to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out = output_root(cfg, args.out) / f"seed_{seed}"
    res = run_seed(cfg, seed, out)
    for method, r in res["methods"].items():
        print(f"{method:12s} test {r['test']:.4f}  ({res['timing'][method]:.1f}s)")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_suite(args) -> int:
    cfg = load_config(args.config)
    out = output_root(cfg, args.out)
    summary = run_suite(cfg, out, args.workers)
    sys.stdout.write(format_table(summary))
    print(f"summary in {out / 'summary.json'}")
    return EXIT_OK


def _boundary_dataset(path: Path):
    spec = DatasetSpec("csv", [], -1, {"path": str(path), "feature_columns": ["x0", "x1"],
                                        "label_column": "label", "domain_column": "domain"})
    domains = load_csv(spec)
    if len(domains) != 1:
        raise ConfigError(f"{path}: expected a single-domain file, found {len(domains)} domains")
    return domains[0]


def cmd_boundary(args) -> int:
    model = load_model(args.checkpoint)
    dataset = _boundary_dataset(Path(args.dataset))
    domain = dataset.domain_index if args.domain is None else args.domain
    if domain in model.domain_indices:
        omega = model.omega_sequence[model.domain_indices.index(domain)]
        source = f"trained parameters of domain {domain}"
    elif domain == model.domain_indices[-1] + 1:
        omega = predict_future(model).values
        source = f"predicted parameters for domain {domain}"
    else:
        raise ConfigError(
            f"domain {domain} is neither a training domain {model.domain_indices} nor the next one"
        )
    render_boundary(model.schema, model.prefix_params, omega, dataset, args.resolution, args.out)
    err = evaluate(model.schema, model.prefix_params, omega, dataset)
    print(f"{args.out}: {source}; error on {args.dataset} = {err:.2f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write every domain of a dataset to CSV")
    g.add_argument("config")
    g.add_argument("--out", help="directory for domain_XX.csv files")
    g.add_argument("--seed", type=int)
    g.add_argument("--force", action="store_true", help="overwrite existing files")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train all configured methods for one seed")
    t.add_argument("config")
    t.add_argument("--seed", type=int, help="default: first seed in the config")
    t.add_argument("--out", help="output root (default: config output_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("suite", help="all seeds x all methods, with a mean ± std table")
    s.add_argument("config")
    s.add_argument("--out", help="output root (default: config output_dir)")
    s.add_argument("--workers", type=int, help="parallel seed workers (default: config value)")
    s.set_defaults(func=cmd_suite)

    b = sub.add_parser("boundary", help="render a decision-boundary PPM from a trained model")
    b.add_argument("checkpoint", help="drain_model.ckpt written by train/suite")
    b.add_argument("dataset", help="single-domain CSV written by gen-data")
    b.add_argument("out", help="output .ppm path")
    b.add_argument("--domain", type=int, help="which domain's parameters to draw (default: the CSV's)")
    b.add_argument("--resolution", type=int, default=200)
    b.set_defaults(func=cmd_boundary)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, CSVFormatError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, NonFiniteError, FloatingPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
