"""``mixerlab <verify|bench|model|diag>``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
The machine-readable report goes to ``--out`` (or stdout); the human
summary goes to stderr.
"""

from __future__ import annotations

import argparse
import sys

from ..costs import count_costs
from ..model import get_model_spec
from . import bench, diag, verify
from .config import COMMANDS, FORMATS, ConfigError, RunConfig, build_config, load_config_file, parse_sizes
from .report import SCHEMA_VERSION, emit, say, to_csv, to_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixerlab", description="Sequence-mixer equivalence checks, benchmarks and cost reports.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--seed", type=int, help="unsigned 64-bit seed (default 0)")
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    parser.add_argument("--sizes", help="comma-separated token counts, e.g. 1024,2048")
    parser.add_argument("--preset", help="mixer preset (diag) or model name T|S|B (model)")
    parser.add_argument("--format", choices=FORMATS, help="report format (default json)")
    parser.add_argument("--out", help="write the report here instead of stdout")
    parser.add_argument("--repeats", type=int, help="timed repeats per benchmark point")
    parser.add_argument("--inject-fault", dest="inject_fault", help="deliberate fault for mutation smoke tests")
    parser.add_argument("--resolution", type=int, help="input resolution for model cost reports (default 224)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "preset": args.preset, "format": args.format, "out": args.out,
        "repeats": args.repeats, "inject_fault": args.inject_fault, "resolution": args.resolution,
    }
    if args.sizes:
        overrides["sizes"] = {"N": parse_sizes(args.sizes)}
    return build_config(args.command, file_values, overrides)


def _render(cfg: RunConfig, report: dict, columns: tuple[str, ...], rows: list[dict]) -> str:
    if cfg.format == "csv":
        return to_csv(columns, rows)
    return to_json({"schema_version": SCHEMA_VERSION, **report})


def cmd_verify(cfg: RunConfig) -> int:
    result = verify.run_verify(cfg)
    report = verify.report_dict(cfg, result)
    emit(_render(cfg, report, verify.CSV_COLUMNS, report["checks"]), cfg.out)
    for c in result.checks:
        say(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<30} max err {c.max_error:.2e}  (tol {c.tolerance:.0e})")
    say(f"{len(result.checks) - len(result.failed())}/{len(result.checks)} checks passed "
        f"in {result.elapsed:.1f} s")
    if not result.passed:
        say("failed: " + ", ".join(result.failed()))
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_bench(cfg: RunConfig) -> int:
    records = bench.run_bench(cfg)
    report = bench.report_dict(cfg, records)
    emit(_render(cfg, report, bench.CSV_COLUMNS, report["records"]), cfg.out)
    for r in records:
        say(f"{r.mixer:<26} N={r.n:<6} median {r.median * 1e3:9.3f} ms  {r.throughput:12.0f} tok/s")
    for g in report["growth"]:
        lo, hi = g["expected"]
        flag = "ok " if g["within_expected"] else "off"
        say(f"{flag} {g['mixer']:<26} {g['n_from']}->{g['n_to']}: x{g['time_ratio']:.2f} (expected {lo}-{hi})")
    return EXIT_OK


def cmd_model(cfg: RunConfig) -> int:
    try:
        spec = get_model_spec(cfg.preset)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    try:
        report = count_costs(spec, cfg.resolution)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.format == "csv":
        emit(report.to_csv(), cfg.out)
    else:
        emit(to_json(report.to_dict()), cfg.out)
    sys.stderr.write(report.to_text())
    return EXIT_OK


def cmd_diag(cfg: RunConfig) -> int:
    try:
        bundle = diag.run_diag(cfg)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    report = diag.report_dict(cfg, bundle)
    emit(_render(cfg, report, diag.CSV_COLUMNS, diag.csv_rows(bundle)), cfg.out)
    say("forget gate means per layer: " + ", ".join(f"{m:.3f}" for m in bundle.forget_gate_means))
    for gate, curve in bundle.attenuation.items():
        say(f"attenuation a={gate}: k=3 -> {curve[3]:.4g}")
    norm = bundle.normalization
    say(f"normalization off >= on in every layer: {norm['pass_rate']:.0%} of seeds (need {norm['required_rate']:.0%})")
    perm = bundle.permutation
    say(f"prefix swap delta: forget off {perm['forget_off_max_delta']:.2e}, "
        f"forget on min {perm['forget_on_min_delta']:.2e}")
    return EXIT_OK if bundle.passed else EXIT_FAIL


HANDLERS = {"verify": cmd_verify, "bench": cmd_bench, "model": cmd_model, "diag": cmd_diag}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = config_from_args(args)
        return HANDLERS[cfg.command](cfg)
    except (UsageError, ConfigError) as exc:
        say(f"mixerlab: error: {exc}")
        say(parser.format_usage().rstrip())
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
