"""Command line entry point: ``multires-fno <subcommand>``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures (non-finite training, solver instability, failed factorizations).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .baselines import POLICY_NAMES
from .errors import ConfigError, NumericalError
from .pde.tasks import TASK_NAMES, make_task, write_dataset_archive

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("multires_fno")


def _config(path, **overrides):
    from .harness import load_config
    cfg = load_config(path)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(cfg, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_generate_data(args) -> int:
    from .harness import resolve_output
    task = make_task(args.task)
    out = write_dataset_archive(resolve_output(args.out), task, args.pool, args.test, args.seed)
    print(out)
    return EXIT_OK


def cmd_fixed_bench(args) -> int:
    from .harness import run_fixed_data_benchmark
    cfg = _config(args.config, seeds=args.seeds, output_dir=args.out)
    if cfg.kind != "fixed-data":
        raise ConfigError(f"fixed-bench needs kind: fixed-data, got {cfg.kind!r}")
    report = run_fixed_data_benchmark(cfg)
    s = report["summary"]
    for name in ("mixed", "low_only"):
        print(f"{name:9s} rel_l2 {s[name]['rel_l2']['mean']:.4f} +- {s[name]['rel_l2']['std']:.4f}"
              f"  nll {s[name]['nll']['mean']:.2f} +- {s[name]['nll']['std']:.2f}")
    print(f"error increase {report['error_increase_pct']['of_means']:.1f}%")
    return EXIT_OK


def cmd_campaign(args) -> int:
    from .campaign import run_campaign
    from .harness import campaign_data
    cfg = _config(args.config, output_dir=args.out)
    policy = args.policy or cfg.policies[0]
    seed = cfg.seeds[0] if args.seed is None else args.seed
    cc = cfg.campaign_config(policy, seed)
    out = cfg.output_path()
    hist = run_campaign(cc, out, resume=args.resume, data=campaign_data(cc, cfg.data_dir))
    cost, err = hist.curve()
    print(f"{policy} seed {seed}: {len(hist.records)} queries, final cost {cost[-1]:.4f}, "
          f"rel_l2 {err[-1]:.4f} -> {out}")
    return EXIT_OK


def cmd_suite(args) -> int:
    from .figures import emit_figures
    from .harness import run_campaign_suite
    cfg = _config(args.config, policies=args.policy, workers=args.workers, output_dir=args.out)
    if cfg.kind != "suite":
        raise ConfigError(f"suite needs kind: suite, got {cfg.kind!r}")
    bundle = run_campaign_suite(cfg)
    for label in bundle.missing:
        print(f"missing: {label}: {bundle.missing[label]}")
    if bundle.histories and not args.no_figures:
        emit_figures(bundle, cfg.output_path() / "figures")
    print(f"{len(bundle.histories)} runs -> {cfg.output_path()}")
    if not bundle.histories:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_figures(args) -> int:
    from pathlib import Path

    from .figures import emit_figures, render_all
    from .harness import SuiteBundle, resolve_output
    src = resolve_output(args.bundle)
    if (src / "suite_manifest.json").exists():
        out = resolve_output(args.out) if args.out else src / "figures"
        paths = emit_figures(SuiteBundle.load(src), out)
    elif (src / "figures.json").exists():
        paths = render_all(src)
    else:
        raise ConfigError(f"{str(src)!r} holds neither a suite manifest nor figure sidecars")
    for p in paths:
        print(Path(p))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multires-fno",
                                description="Multi-resolution active learning for Fourier neural operators")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a pool/test dataset archive")
    g.add_argument("--task", choices=TASK_NAMES, required=True)
    g.add_argument("--pool", type=int, required=True)
    g.add_argument("--test", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    f = sub.add_parser("fixed-bench", help="mixed vs low-only training on fixed data")
    f.add_argument("--config", required=True)
    f.add_argument("--seeds", type=int, nargs="+")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fixed_bench)

    c = sub.add_parser("campaign", help="run one active-learning campaign")
    c.add_argument("--config", required=True)
    c.add_argument("--policy", choices=POLICY_NAMES)
    c.add_argument("--seed", type=int)
    c.add_argument("--resume", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_campaign)

    s = sub.add_parser("suite", help="run a comparison suite and emit its figures")
    s.add_argument("--config", required=True)
    s.add_argument("--policy", choices=POLICY_NAMES, action="append",
                   help="restrict to these policies (repeatable)")
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_suite)

    fg = sub.add_parser("figures", help="draw figures from a suite directory or sidecars")
    fg.add_argument("--bundle", required=True)
    fg.add_argument("--out")
    fg.set_defaults(func=cmd_figures)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
