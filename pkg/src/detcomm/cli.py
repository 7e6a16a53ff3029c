"""Command-line entry point.

Human-readable output goes to stderr, machine output (CSV, hex) to stdout.

Exit codes: 0 success, 1 error (bad input, usage, internal failure),
2 session aborted (``simulate``), 3 scheme checks failed (``verify``).
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from . import analysis
from .adversary import ForwardingMode, Variant, strategy_from_spec
from .protocol import SEED_ENV, ConfigError, SessionError, Verdict, load_config, run_session, with_seed
from .scheme import InvalidParams, SchemeParams

EXIT_OK, EXIT_ERROR, EXIT_ABORT, EXIT_CHECKS_FAILED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors share the generic error code
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _err(*args) -> None:
    print(*args, file=sys.stderr)


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env, 0) if env else None


def _load(args):
    cfg = load_config(args.config)
    seed = _seed(args)
    return with_seed(cfg, seed) if seed is not None else cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    bases = cfg.bases()
    eve = strategy_from_spec(args.eve or cfg.eve, bases)
    if args.stream:
        from .transport import run_session_stream

        t, _ = run_session_stream(cfg, eve)
    else:
        t = run_session(cfg, eve)
    rep = t.error_report
    _err(f"frames: {len(t.frames)} ({rep.control_total} controls measured, {len(t.lost_positions)} lost)")
    _err(f"control error rate: {rep.error_rate:.6f} ({rep.control_errors}/{rep.control_total}), "
         f"threshold {cfg.abort_threshold:.6f}")
    _err(f"verdict: {rep.verdict.name}")
    if rep.verdict is Verdict.ABORT:
        return EXIT_ABORT
    if t.decoded_message is not None:
        print(t.decoded_message.hex())
        ok = t.decoded_message == cfg.message
    else:
        ok = t.surviving_bits_match()
        _err("message incomplete (photon loss); surviving bits " + ("match" if ok else "DIFFER"))
    _err("decode: " + ("exact" if ok else "MISMATCH"))
    return EXIT_OK if ok else EXIT_ERROR


def cmd_sweep(args) -> int:
    params = SchemeParams.parse(args.scheme).validate()
    rows, summary = analysis.sweep_strategies(params, args.n, args.mode, _seed(args) or 0, args.empirical)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            analysis.write_csv(rows, fh)
    else:
        analysis.write_csv(rows, sys.stdout)
    _err(f"strategies: {summary.n_strategies}  mode: {ForwardingMode(args.mode).value}")
    _err(f"min rate: {summary.min_rate:.10f}  mean rate: {summary.mean_rate:.10f}")
    _err(f"bound:    {summary.bound:.10f}  violations: {summary.violations}")
    return EXIT_OK if summary.violations == 0 else EXIT_CHECKS_FAILED


def cmd_verify(args) -> int:
    params = SchemeParams.parse(args.params or args.scheme)
    report = analysis.verify_scheme(params)
    _err(report.format())
    print("check,passed,deviation")
    for c in report.checks:
        print(f"{c.name},{int(c.passed)},{c.deviation:.17g}")
    return EXIT_OK if report.passed else EXIT_CHECKS_FAILED


def cmd_attack(args) -> int:
    cfg = _load(args)
    bases = cfg.bases()
    spec = args.eve or (cfg.eve if cfg.eve != "none" else "optimal")
    strategy = strategy_from_spec(spec, bases)
    res = analysis.run_attack(cfg, strategy)
    rep = res.transcript.error_report
    sigma = analysis.binomial_sigma(res.analytic_rate, rep.control_total)
    _err(f"strategy: {strategy.label or spec}")
    _err(f"Bob control error rate: {rep.error_rate:.6f} over {rep.control_total} controls "
         f"(analytic {res.analytic_rate:.6f} +/- {sigma:.6f}, bound {res.bound:.6f})")
    _err(f"verdict: {rep.verdict.name}")
    _err(f"Eve pre-key leakage (TV distance): {res.leakage:.3e}")
    if strategy.variant is not Variant.NONE:
        _err(f"Eve recovery with published key: correct {res.recovery.correct_fraction:.6f}, "
             f"certain {res.recovery.certain_fraction:.6f} over {res.recovery.count} message bits")
    print("bob_error_rate,analytic_rate,bound,verdict,eve_correct_fraction,eve_certain_fraction")
    print(f"{rep.error_rate:.17g},{res.analytic_rate:.17g},{res.bound:.17g},{rep.verdict.name},"
          f"{res.recovery.correct_fraction:.17g},{res.recovery.certain_fraction:.17g}")
    return EXIT_OK


def cmd_qnd_scan(args) -> int:
    points = analysis.qnd_scan(args.grid)
    print("a1,a2,a3,vulnerable,pattern")
    for p in points:
        pat = "".join(map(str, p.pattern)) if p.pattern else ""
        print(f"{p.a1:.17g},{p.a2:.17g},{p.a3:.17g},{int(p.vulnerable)},{pat}")
    vulnerable = [p for p in points if p.vulnerable]
    interior_hits = [p for p in vulnerable if not p.on_boundary]
    boundary_misses = [p for p in points if p.on_boundary and not p.vulnerable]
    _err(f"grid points: {len(points)}  vulnerable: {len(vulnerable)}")
    _err(f"vulnerable interior points: {len(interior_hits)}  secure boundary points: {len(boundary_misses)}")
    _err("vulnerable region = {some a_i = 0}: " + ("yes" if not interior_hits and not boundary_misses else "NO"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help=f"64-bit seed (fallback: ${SEED_ENV})")

    p = _Parser(prog="detcomm", description="Publicly-known-key quantum communication simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run one Alice/Bob session")
    s.add_argument("--config", required=True)
    s.add_argument("--eve", help="override the config's eavesdropper spec")
    s.add_argument("--stream", action="store_true", help="run parties over framed byte streams")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="random intercept-resend strategies vs. the bound")
    s.add_argument("--scheme", default="optimal", help="optimal | simple | a1,a2,a3")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--mode", choices=[m.value for m in ForwardingMode], default=ForwardingMode.AS_DETECTED.value)
    s.add_argument("--empirical", type=_positive_int, metavar="BITS")
    s.add_argument("--output", help="write CSV here instead of stdout")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("verify", parents=[common], help="check scheme invariants")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--scheme", default="optimal")
    g.add_argument("--params", help="a1,a2,a3")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("attack", parents=[common], help="session under attack plus post-key recovery")
    s.add_argument("--config", required=True)
    s.add_argument("--eve", help="none | optimal | qnd | random:<seed> | random-fixed:<seed>")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("qnd-scan", parents=[common], help="QND-vulnerability over a parameter grid")
    s.add_argument("--grid", type=_positive_int, default=21)
    s.set_defaults(func=cmd_qnd_scan)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParams, SessionError, ValueError, OSError) as exc:
        _err(f"detcomm: error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
