"""Command line front end: ``smallness-lab run|acceptance|list-experiments``.

Exit codes: 0 when every check passes, 1 when a check or a coefficient
invariant fails, 2 for usage and config errors.
"""
from __future__ import annotations

import argparse
import hashlib
import sys

from .artifacts import OutputDir, worker_count
from .config import KINDS, ConfigError, ExperimentConfig, load_config
from .grid import CoefficientInvariantError

__all__ = ["main", "run_experiment"]

DESCRIPTIONS = {
    "spectrum": "eigenvalues of the operator; optional comparison against a closed form in k",
    "spectral-constant": "spectral inequality constants over a cutoff sweep with sqrt/linear growth fits",
    "propagation": "three-sphere interpolation fit on solution samples",
    "gradient-propagation": "gradient-form smallness fit on lifted frequency-limited samples",
    "control": "Lebeau-Robbiano control over a T sweep with a Duhamel oracle",
    "ghost-check": "refinement study of the lifted (ghost-dimension) extension",
    "double-check": "mirror extension of interval modes to the doubled circle",
    "reduction-replay": "level-set dichotomy and good-point blocks on a thick set",
}


def run_experiment(cfg: ExperimentConfig):
    """Run one configured experiment; returns ``(all_passed, checks)``."""
    from .experiments import EXPERIMENTS

    out = OutputDir(cfg.output)
    checks = EXPERIMENTS[cfg.kind](cfg, out)
    config_hash = hashlib.sha256(cfg.path.read_bytes()).hexdigest()
    out.manifest({
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config_sha256": config_hash,
        "checks": [c.as_dict() for c in checks],
        "passed": bool(all(c.passed for c in checks)),
    })
    return all(c.passed for c in checks), checks


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    ok, checks = run_experiment(cfg)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else ""))
    print(f"artifacts in {cfg.output}")
    return 0 if ok else 1


def _cmd_acceptance(args) -> int:
    from .acceptance import SUITES, run_suite

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    results = run_suite(args.suite)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def _cmd_list(args) -> int:
    for k in KINDS:
        print(f"{k:22s} {DESCRIPTIONS[k]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smallness-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(fn=_cmd_run)
    a = sub.add_parser("acceptance", help="run an acceptance suite (fast or full)")
    a.add_argument("suite")
    a.set_defaults(fn=_cmd_acceptance)
    sub.add_parser("list-experiments", help="list experiment kinds").set_defaults(fn=_cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        worker_count()
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CoefficientInvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
