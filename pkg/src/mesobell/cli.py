"""Command line entry point: ``mesobell {predict,generate,estimate,validate}``.

Exit status: 0 success, 2 usage error, 3 validation failure (bad config,
violated invariant, failed check), 4 I/O failure, 5 event file parse
failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, physics
from .config import RunConfig, resolve_config
from .errors import EmptyBinError, EventParseError, MesobellError, ValidationError
from .estimation import bin_events, compare_to_model, scan_chsh
from .eventgen import generate_dataset, normalization_audit
from .io import (
    count_records,
    file_digest,
    read_events,
    write_events,
    write_prediction_csv,
    write_results_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_PARSE = 5

_FLAG_KEYS = {
    "seed": "seed",
    "events": "events",
    "bin_width": "bin_width",
    "dm": "delta_m",
    "tau": "tau_b",
    "out": "out",
    "workers": "workers",
    "chunk_size": "chunk_size",
    "dt_max": "dt_max",
    "format": "format",
}


def _say(key: str, value) -> None:
    print(f"{key}: {value}")


def _echo_config(cfg: RunConfig) -> None:
    print("# resolved config")
    sys.stdout.write(cfg.to_text())


def _write_config_sidecar(cfg: RunConfig, out: Path) -> None:
    Path(str(out) + ".config").write_text(cfg.to_text(), encoding="utf-8")


def _default_out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.out) if cfg.out else Path(name)


def cmd_predict(cfg: RunConfig) -> int:
    p = cfg.physics()
    grid = np.arange(0.0, cfg.dt_max + 0.5 * cfg.predict_step, cfg.predict_step)
    out = _default_out(cfg, "prediction.csv")
    write_prediction_csv(grid, physics.correlation(grid, p), physics.chsh_statistic(grid, p), out)
    _write_config_sidecar(cfg, out)
    dt_max, s_max = physics.chsh_maximum(p)
    _say("prediction_csv", out)
    _say("S_max", repr(s_max))
    _say("S_max_delta_t_ps", repr(dt_max))
    _say("S_max_phase_rad", repr(p.delta_m * dt_max))
    _say("violation_boundary_ps", repr(physics.violation_boundary(p)))
    _echo_config(cfg)
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    gen = cfg.generation()
    out = _default_out(cfg, f"events.{cfg.format}")
    ds = generate_dataset(gen, workers=cfg.workers)
    write_events(ds, out, cfg.format)
    written = count_records(out)
    if written != ds.count:
        print(f"error: wrote {written} records to {out}, expected {ds.count}", file=sys.stderr)
        return EXIT_IO
    _say("events_file", out)
    _say("count", ds.count)
    _say("seed", ds.seed)
    _say("sha256", file_digest(out))
    _echo_config(cfg)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, event_file: str) -> int:
    ds = read_events(event_file)
    try:
        wanted = cfg.physics()
    except ValidationError:
        wanted = None
    if wanted != ds.params:
        print(
            "warning: event file header params differ from config; using the file header",
            file=sys.stderr,
        )
    p = ds.params
    scheme = cfg.binning()
    bins = bin_events(ds, scheme, tagged_only=cfg.tagged_only)
    curve = scan_chsh(bins, scheme)
    out = _default_out(cfg, "results.csv")
    write_results_csv(bins, curve, out)
    _write_config_sidecar(cfg, out)
    _say("results_csv", out)
    _say("events", ds.count)
    _say("events_binned", sum(b.n for b in bins))
    if curve.estimates:
        best = curve.best
        _say("S_hat_max", repr(best.s_hat))
        _say("S_hat_max_delta_t_ps", repr(best.delta_t))
        _say("S_hat_max_sigma", repr(best.sigma_s))
        _say("S_hat_max_significance", repr(best.significance))
        _say("S_qm_at_max_bins", repr(best.predicted(p)))
        top = curve.most_significant
        _say("max_significance", repr(top.significance))
        _say("max_significance_delta_t_ps", repr(top.delta_t))
        win = curve.violation_window
        _say("violation_window_ps", "none" if win is None else f"{win[0]!r}..{win[1]!r}")
    else:
        _say("S_hat_max", "none (no admissible CHSH grid point)")
    try:
        fit = compare_to_model(bins, p)
        _say("fit_chi2", f"{fit.chi2!r} / {fit.dof} dof (p = {fit.p_value:.4g})")
    except MesobellError as exc:
        _say("fit_chi2", f"unavailable ({exc})")
    _say("violation_boundary_qm_ps", repr(physics.violation_boundary(p)))
    _echo_config(cfg)
    return EXIT_OK


def run_checks(p: physics.PhysicsParams, seed: int) -> list[tuple[str, bool, float]]:
    """Internal consistency checks as ``(name, passed, residual)``."""
    checks = []
    try:
        norm = normalization_audit(p)
        checks.append(("normalization", abs(norm - 1.0) < 1e-6, abs(norm - 1.0)))
    except MesobellError as exc:
        checks.append(("normalization", False, getattr(exc, "residual", math.inf)))

    rng = np.random.default_rng(seed)
    t = rng.exponential(p.tau_b, size=(2, 1000))
    worst = 0.0
    for pair in physics.FlavorPair.all():
        amp = physics.pair_amplitude(t[0], t[1], pair, p)
        prob = physics.joint_flavor_probability(t[0], t[1], pair, p)
        worst = max(worst, float(np.max(np.abs(np.abs(amp) ** 2 - prob))))
    checks.append(("amplitude_vs_probability", worst <= 1e-12, worst))

    grid = np.linspace(0.0, 10.0 * p.tau_b, 2001)
    c = np.cos(p.delta_m * grid)
    cubic = np.abs(6.0 * c - 4.0 * c**3)
    # cos(3x) at large x loses ~|x| * eps of absolute accuracy
    tol = 1e-12 + 4.0 * np.finfo(float).eps * 3.0 * p.delta_m * grid[-1]
    resid = float(np.max(np.abs(physics.chsh_statistic(grid, p) - cubic)))
    checks.append(("chsh_identity", resid <= tol, resid))

    _, s_max = physics.chsh_maximum(p)
    checks.append(("chsh_maximum", abs(s_max - 2.0 * math.sqrt(2.0)) < 1e-10, abs(s_max - 2.0 * math.sqrt(2.0))))

    x = p.delta_m * physics.violation_boundary(p)
    checks.append(("violation_boundary", abs(x - physics.BOUNDARY_PHASE) < 1e-8, abs(x - physics.BOUNDARY_PHASE)))
    return checks


def cmd_validate(cfg: RunConfig) -> int:
    try:
        cfg.validate()
    except ValidationError as exc:
        print(f"FAIL invariant: {exc}")
        return EXIT_VALIDATION
    failed = 0
    for name, ok, residual in run_checks(cfg.physics(), cfg.seed):
        print(f"{'PASS' if ok else 'FAIL'} {name}: residual {residual:.3e}")
        failed += not ok
    _echo_config(cfg)
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--events", type=int, help="number of pairs to generate")
    common.add_argument("--bin-width", type=float, metavar="PS")
    common.add_argument("--dt-max", type=float, metavar="PS")
    common.add_argument("--dm", type=float, metavar="PS_INV", help="mass difference delta_m")
    common.add_argument("--tau", type=float, metavar="PS", help="B lifetime")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--workers", type=int)
    common.add_argument("--chunk-size", type=int)
    common.add_argument("--format", choices=["jsonl", "csv"])
    common.add_argument(
        "--tagged-only", action="store_true", default=None, help="use only taggable decay modes"
    )

    parser = argparse.ArgumentParser(
        prog="mesobell",
        description="Flavour correlations and the CHSH statistic for entangled B-meson pairs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("predict", parents=[common], help="tabulate the closed-form E(dt) and S(dt)")
    sub.add_parser("generate", parents=[common], help="generate an event file")
    est = sub.add_parser("estimate", parents=[common], help="binned E and S from an event file")
    est.add_argument("event_file")
    sub.add_parser("validate", parents=[common], help="run normalization and identity checks")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, flag) for flag, key in _FLAG_KEYS.items()}
    overrides["tagged_only"] = args.tagged_only
    try:
        cfg = resolve_config(args.config, overrides)
        if args.command == "validate":
            return cmd_validate(cfg)
        cfg.validate()
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "generate":
            return cmd_generate(cfg)
        return cmd_estimate(cfg, args.event_file)
    except EventParseError as exc:
        print(f"error: {args.event_file if args.command == 'estimate' else ''}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, EmptyBinError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
