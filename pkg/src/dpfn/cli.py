"""Command line entry point: ``dpfn run`` and ``dpfn report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from dpfn import harness
from dpfn.errors import ConfigurationError

log = logging.getLogger("dpfn")


def _build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(prog="dpfn", description=__doc__)
  sub = parser.add_subparsers(dest="command", required=True)

  run = sub.add_parser("run", help="run an experiment sweep")
  run.add_argument("--config", required=True, help="JSON experiment config")
  run.add_argument("--out", required=True, help="output directory")
  run.add_argument("--threads", type=int, default=1, help="worker processes")
  run.add_argument("--restarts", type=int, default=None, help="override restarts")
  run.add_argument("--seed", type=int, default=None, help="override base seed")

  rep = sub.add_parser("report", help="re-derive summaries from a run directory")
  rep.add_argument("--in", dest="in_dir", help="directory written by `run`")
  rep.add_argument("--score-bands", action="store_true",
                   help="emit score quantiles for the fixed two-contact instance")
  rep.add_argument("--out", default=None, help="CSV path for --score-bands (default stdout)")
  rep.add_argument("--epsilon", type=float, default=1.0)
  rep.add_argument("--samples", type=int, default=2000)
  rep.add_argument("--seed", type=int, default=0)
  return parser


def _cmd_run(args) -> int:
  if args.threads < 1:
    raise ConfigurationError("--threads must be >= 1")
  cfg = harness.ExperimentConfig.from_json(args.config)
  overrides = {}
  if args.restarts is not None:
    overrides["restarts"] = args.restarts
  if args.seed is not None:
    overrides["seed"] = args.seed
  if overrides:
    cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
  n_runs = len(cfg.points()) * cfg.restarts
  log.info("%d points x %d restarts = %d runs", len(cfg.points()), cfg.restarts, n_runs)

  def progress(res):
    log.info("done p%03d-r%02d in %.1fs", res[0], res[1], res[3])

  doc = harness.run_sweep(cfg, args.out, threads=args.threads, progress=progress)
  _print_table(doc)
  return 0


def _print_table(doc) -> None:
  print(f"{'point':6} {'method':13} {'epsilon':>8} {'PIR med':>9} {'q20':>9} {'q80':>9}")
  for p in doc["points"]:
    print(f"{p['point_id']:6} {p['method']:13} {str(p['epsilon']):>8} "
          f"{p['pir_median']:9.4f} {p['pir_q20']:9.4f} {p['pir_q80']:9.4f}")


def _cmd_report(args) -> int:
  if args.score_bands:
    rows = harness.score_bands(epsilon=args.epsilon, n_samples=args.samples, seed=args.seed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
      writer = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
      writer.writeheader()
      writer.writerows(rows)
    finally:
      if args.out:
        out.close()
    return 0
  if not args.in_dir:
    raise ConfigurationError("report needs --in DIR or --score-bands")
  _print_table(harness.report(args.in_dir))
  return 0


def main(argv=None) -> int:
  logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
  args = _build_parser().parse_args(argv)
  try:
    if args.command == "run":
      return _cmd_run(args)
    return _cmd_report(args)
  except (ConfigurationError, OSError, json.JSONDecodeError) as exc:
    print(f"dpfn: error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
  sys.exit(main())
