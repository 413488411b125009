"""Command-line entry point: ``edgekit <command> ...``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import __version__
from .config import ConfigError, help_text, parse_config
from .testdata import PHANTOM_KINDS, PhantomError, csv_value, phantom, write_pgm

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _thread_limit():
    raw = os.environ.get("EDGEKIT_THREADS")
    if not raw:
        return nullcontext()
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"EDGEKIT_THREADS must be an integer, got {raw!r}") from None
    if count < 1:
        raise ConfigError(f"EDGEKIT_THREADS must be >= 1, got {count}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=count)


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = parse_config(args.config)
    result = run_experiment(cfg, args.out)
    final = result.log.outer[result.final_outer - 1]
    print(f"outer iterations: {len(result.log.outer)}, returned iterate {result.final_outer} "
          f"({result.stop_reason}), relative error {final.relative_error:.6g}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    img = phantom(args.kind, args.n, args.seed)
    out = Path(args.out or f"{args.kind}_{args.n}.pgm")
    write_pgm(img, out)
    print(out)
    return EXIT_OK


def cmd_forward(args) -> int:
    from .experiment import write_forward

    cfg = parse_config(args.config)
    problem = write_forward(cfg, args.out)
    print(f"data: {problem.data.b.size} values, ||eta|| = {problem.data.eta_norm:.6g}")
    return EXIT_OK


def cmd_oracle_verify(args) -> int:
    from .oracle import oracle_suite

    checks = oracle_suite()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}: {c.name} ({c.detail})")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME


def _tag(cfg, other) -> str:
    return cfg.scheme if cfg.scheme != other.scheme else f"{cfg.scheme}_{cfg.rule}"


def cmd_compare(args) -> int:
    from .experiment import build_problem, solve

    cfg_a, cfg_b = parse_config(args.config_a), parse_config(args.config_b)
    if cfg_a.problem_key() != cfg_b.problem_key():
        raise ConfigError("compare needs two configs describing the same problem and data")
    tag_a, tag_b = _tag(cfg_a, cfg_b), _tag(cfg_b, cfg_a)
    if tag_a == tag_b:
        tag_a, tag_b = tag_a + "_a", tag_b + "_b"
    problem = build_problem(cfg_a)
    logs = [solve(cfg, problem)[1].log.outer for cfg in (cfg_a, cfg_b)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["outer_iter"]
    for tag in (tag_a, tag_b):
        cols += [f"lambda_{tag}", f"residual_norm_{tag}", f"seminorm_{tag}", f"relative_error_{tag}"]
    writer.writerow(cols)
    for ell in range(1, max(len(logs[0]), len(logs[1])) + 1):
        row = [str(ell)]
        for log in logs:
            if ell <= len(log):
                r = log[ell - 1]
                row += [csv_value(v) for v in (r.lam, r.residual_norm, r.seminorm, r.relative_error)]
            else:
                row += ["", "", "", ""]
        writer.writerow(row)
    out = Path(args.out or Path(cfg_a.output_dir) / "compare.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgekit",
        description="Edge-enhancing inner-outer reconstruction for CT and deblurring.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys (one 'key = value' per line, '#' starts a comment):\n" + help_text()
        + "\n\nEDGEKIT_THREADS caps BLAS/LAPACK threads.  Exit codes: 0 ok, 1 config error, 2 runtime error.",
    )
    parser.add_argument("--version", action="version", version=f"edgekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write images and logs")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("phantom", help="write a test image as PGM")
    p.add_argument("kind", choices=PHANTOM_KINDS)
    p.add_argument("n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default <kind>_<n>.pgm)")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("forward", help="write the true image and the noisy data only")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("oracle-verify", help="dense checks of curve nesting and parameter monotonicity")
    p.set_defaults(func=cmd_oracle_verify)

    p = sub.add_parser("compare", help="run two configurations on one problem, write a joint CSV")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--out", help="CSV path (default <output_dir of A>/compare.csv)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, PhantomError) as exc:
        print(f"edgekit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # one-line diagnosis for any module failure
        print(f"edgekit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
