"""Command-line entry point.

Examples::

    cransim all --config default --out run1
    cransim compare --config configs/default.yaml --seed 3 --out run2
    cransim sweep --config default --seeds 0,1,2 --axis density --out run3

Every subcommand writes ``results.csv``, ``forest.model`` (forest of the
first seed), ``summary.txt`` and ``genie_records.csv`` into ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from cransim import allocator as alloc
from cransim import forest as rf_mod
from cransim import harness
from cransim.config import load_config
from cransim.errors import ConfigError

log = logging.getLogger("cransim")

PARTS = {
    "train": (),
    "compare": ("compare",),
    "overhead": ("compare", "overhead"),
    "all": ("compare", "sweep", "overhead"),
}
AXES = {"density": ("sweep_density",), "shadow": ("sweep_shadow",), "both": ("sweep",)}


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cransim", description="Position-based CRAN beam and packet-size allocation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,compare,sweep,overhead,all}")
    for name, help_text in (
        ("train", "genie labelling, packet-size design and forest training only"),
        ("compare", "scheme comparison over the position-noise variances"),
        ("sweep", "scatterer-density and shadow-height robustness sweeps"),
        ("overhead", "overhead-adjusted throughput of the learned scheme and the genie"),
        ("all", "every study above"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML config file, or 'default' for built-in defaults")
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, help="run a single seed")
        seeds.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (default: config seeds)")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            p.add_argument("--axis", choices=sorted(AXES), default="both")
    return parser


def run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    elif args.seeds is not None:
        cfg = dataclasses.replace(cfg, seeds=args.seeds)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    parts = AXES[args.axis] if args.command == "sweep" else PARTS[args.command]
    artifacts, rows = [], []
    for seed in cfg.seeds:
        log.info("seed %d: %s", seed, args.command)
        art, seed_rows = harness.run_seed(cfg, seed, parts)
        artifacts.append(art)
        rows.extend(seed_rows)

    first = artifacts[0]
    (out / "results.csv").write_text(harness.rows_to_csv(harness.sort_rows(rows)))
    (out / "forest.model").write_text(rf_mod.to_text(first.forest))
    (out / "summary.txt").write_text(harness.summary_text(cfg, artifacts, rows))
    alloc.write_records(out / "genie_records.csv", first.records)
    log.info("wrote %d result rows to %s", len(rows), out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config != "default" and not Path(args.config).is_file():
        parser.error(f"config file not found: {args.config}")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"cransim: invalid config: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"cransim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
