"""Command-line entry point.

Configuration is a flat ``key = value`` text file with dotted keys, for
example::

    p = 0.5
    sigma = 1000
    n_pop = 61729
    beta = 0.270651
    hazard.family = quadratic
    hazard.K = 5e-7
    penalty.chi = 3

Exit codes: 0 success, 2 configuration error, 3 assumption failure,
4 solver failure, 5 replication mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import calibration, equilibrium
from .model import HazardModel, ModelError, ModelParams, PenaltyModel, validate_assumptions
from .numerics import NumericsError

log = logging.getLogger("kyle_stealth")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_SOLVER = 4
EXIT_MISMATCH = 5

MODEL_KEYS = {
    "p", "sigma", "n_pop", "beta",
    "hazard.family", "hazard.K", "hazard.theta", "hazard.theta_prime",
    "hazard.theta_D", "hazard.y_bar", "hazard.sigma",
    "penalty.chi", "penalty.family", "penalty.K_alpha", "penalty.alpha", "penalty.alpha_prime",
}
OPTION_KEYS = {
    "solver.tol", "solver.inner_rel_tol", "solver.scan_points", "solver.scan_lo", "solver.scan_hi",
    "solver.node_count", "solver.check_assumptions",
    "solve.compare_limit", "converge.n_list", "converge.workers",
    "stats.insider_volume", "stats.total_volume", "stats.volume_ratio", "stats.total_volume_stderr",
    "stats.episode_count", "stats.mu", "stats.sigma",
    "calibration.fixture", "calibration.chi", "calibration.conditions", "calibration.stats_file",
}
STATS_FIELDS = ("insider_volume", "total_volume", "volume_ratio", "total_volume_stderr",
                "episode_count", "mu", "sigma")
KNOWN_KEYS = MODEL_KEYS | OPTION_KEYS


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls(parse_config(text))

    def has(self, key: str) -> bool:
        return key in self.values

    def text(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def number(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            val = float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from exc
        if not math.isfinite(val):
            raise ConfigError(f"{key} must be finite")
        return val

    def integer(self, key: str, default: int | None = None) -> int:
        val = self.number(key, None if default is None else float(default))
        if val != int(val):
            raise ConfigError(f"{key} must be an integer")
        return int(val)

    def flag(self, key: str, default: bool = False) -> bool:
        if key not in self.values:
            return default
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean")

    def int_list(self, key: str) -> list[int] | None:
        if key not in self.values:
            return None
        return parse_int_list(self.values[key])

    # model ---------------------------------------------------------------

    def hazard(self) -> HazardModel:
        fam = self.text("hazard.family")
        beta = self.number("beta", 0.0)
        tp = self.number("hazard.theta_prime", 1.0)
        if fam == "quadratic":
            return HazardModel.quadratic(self.number("hazard.K"), beta, tp)
        if fam == "absolute":
            return HazardModel.absolute(self.number("hazard.K"), beta, tp)
        if fam == "power":
            return HazardModel.power(self.number("hazard.K"), self.number("hazard.theta"), beta, tp)
        if fam == "erfc_detection":
            return HazardModel.erfc_detection(self.number("hazard.K"), self.number("hazard.theta_D"),
                                              self.number("hazard.y_bar"), self.number("hazard.sigma"), tp)
        if fam == "logarithmic":
            return HazardModel.logarithmic(self.number("hazard.K", 1.0), beta)
        if fam == "none":
            return HazardModel.none()
        raise ConfigError(f"unknown hazard.family {fam!r}")

    def penalty(self) -> PenaltyModel:
        chi = self.number("penalty.chi", 1.0)
        fam = self.text("penalty.family", "zero")
        ap = self.number("penalty.alpha_prime", 1.0)
        if fam == "zero":
            return PenaltyModel.civil(chi)
        if fam == "linear":
            return PenaltyModel.linear(chi, self.number("penalty.K_alpha"), ap)
        if fam == "power":
            return PenaltyModel.power(chi, self.number("penalty.K_alpha"), self.number("penalty.alpha"), ap)
        if fam == "piecewise_example3":
            return PenaltyModel.piecewise_example3(chi)
        raise ConfigError(f"unknown penalty.family {fam!r}")

    def params(self) -> ModelParams:
        try:
            return ModelParams(
                p=self.number("p"),
                sigma=self.number("sigma"),
                n_pop=self.integer("n_pop", 1),
                hazard=self.hazard(),
                penalty=self.penalty(),
            )
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc

    def solver_options(self, tol: float | None = None) -> equilibrium.SolverOptions:
        d = equilibrium.SolverOptions()
        opts = equilibrium.SolverOptions(
            tol=self.number("solver.tol", d.tol),
            inner_rel_tol=self.number("solver.inner_rel_tol", d.inner_rel_tol),
            scan_points=self.integer("solver.scan_points", d.scan_points),
            scan_lo=self.number("solver.scan_lo", d.scan_lo),
            scan_hi=self.number("solver.scan_hi", d.scan_hi),
            node_count=self.integer("solver.node_count", d.node_count),
            check_assumptions=self.flag("solver.check_assumptions", d.check_assumptions),
        )
        if tol is not None:
            opts = replace(opts, tol=tol)
        if not (opts.tol > 0 and opts.inner_rel_tol > 0 and opts.scan_points >= 8
                and 0 < opts.scan_lo < opts.scan_hi and opts.node_count >= 3):
            raise ConfigError("invalid solver options")
        return opts


def parse_int_list(text: str) -> list[int]:
    try:
        vals = [int(float(s)) for s in text.replace(" ", "").split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc
    if not vals or any(v < 1 for v in vals):
        raise ConfigError("integer list must hold positive values")
    return vals


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def emit(out_dir: str | None, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)
    log.info("wrote %s", path / name)


def svg_lines(title: str, x, curves, width: int = 480, height: int = 320) -> str:
    """Minimal SVG 1.1 line plot: a frame, axis labels and one polyline per curve."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(c[1], dtype=float) for c in curves]
    pad = 40
    x0, x1 = float(x.min()), float(x.max())
    y0 = min(float(y.min()) for y in ys)
    y1 = max(float(y.max()) for y in ys)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ("#1f4e9c", "#c0392b", "#2e7d32")
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{pad / 2:.1f}" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{pad}" y="{height - pad / 3:.1f}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad / 3:.1f}" text-anchor="end" font-size="10">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad:.1f}" text-anchor="end" font-size="10">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 8:.1f}" text-anchor="end" font-size="10">{y1:.3g}</text>',
    ]
    for k, ((label, _), y) in enumerate(zip(curves, ys)):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        colour = colours[k % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 16 + 14 * k}" text-anchor="end" '
                     f'font-size="11" fill="{colour}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(cfg: RunConfig, args) -> int:
    report = validate_assumptions(cfg.params())
    print(report)
    return EXIT_OK if report.passed else EXIT_ASSUMPTION


def cmd_solve(cfg: RunConfig, args) -> int:
    params = cfg.params()
    opts = cfg.solver_options(args.tol)
    compare = cfg.flag("solve.compare_limit")
    gamma = equilibrium.model_gamma(params)
    if compare and gamma >= 0.5:
        warnings.warn("limiting comparison needs gamma < 1/2; skipping it")
        compare = False
    sol = equilibrium.solve_finite(params, opts)
    s = sol.strategy
    print(f"N = {params.n_pop}, gamma = {fmt(gamma)}")
    print(f"Z*_N = ({fmt(s.z0)}, {fmt(s.z1)}), zeta* = {fmt(sol.zeta_star)}")
    print(f"residuals: F0 = {sol.residual_f0:.3e}, G1 = {sol.residual_g1:.3e}; roots found: {len(sol.all_roots)}")
    if compare:
        lim = equilibrium.solve_limiting(params).strategy_scaled.scaled(params.n_pop**gamma)
        print(f"N^gamma * limiting strategy = ({fmt(lim.z0)}, {fmt(lim.z1)})")
    emit(args.out, "solve.csv", csv_text(
        ["n_pop", "z0", "z1", "zeta", "residual_f0", "residual_g1"],
        [[params.n_pop, s.z0, s.z1, sol.zeta_star, sol.residual_f0, sol.residual_g1]]))
    return EXIT_OK


def cmd_limit(cfg: RunConfig, args) -> int:
    params = cfg.params()
    lim = equilibrium.solve_limiting(params, cfg.solver_options(args.tol))
    s = lim.strategy_scaled
    print(f"gamma = {fmt(lim.gamma)}, method = {lim.method}")
    print(f"scaled limiting strategy = ({fmt(s.z0)}, {fmt(s.z1)})")
    price = "" if lim.price_constant is None else lim.price_constant
    emit(args.out, "limit.csv", csv_text(
        ["gamma", "method", "z0_scaled", "z1_scaled", "price_constant", "residual0", "residual1"],
        [[lim.gamma, lim.method, s.z0, s.z1, price, lim.residuals[0], lim.residuals[1]]]))
    return EXIT_OK


def cmd_converge(cfg: RunConfig, args) -> int:
    params = cfg.params()
    n_list = parse_int_list(args.n_list) if args.n_list else cfg.int_list("converge.n_list")
    if not n_list:
        raise ConfigError("converge needs --n-list or converge.n_list")
    if equilibrium.model_gamma(params) >= 0.5:
        raise ConfigError("convergence diagnostics need gamma < 1/2")
    rep = equilibrium.convergence_report(params, n_list, cfg.solver_options(args.tol),
                                         workers=cfg.integer("converge.workers", 1))
    rows = []
    for r in rep.rows:
        z0 = r.strategy_scaled.z0 if r.strategy_scaled else math.nan
        z1 = r.strategy_scaled.z1 if r.strategy_scaled else math.nan
        rows.append([r.n, z0, z1, r.abs_error[0], r.abs_error[1], r.bound_exponent, r.epsilon])
        if r.error:
            print(f"N = {r.n}: solver failure: {r.error}", file=sys.stderr)
    print(f"gamma = {fmt(rep.gamma)}; fitted slopes ({fmt(rep.fitted_slope[0])}, {fmt(rep.fitted_slope[1])}) "
          f"vs exponent {fmt(rep.theory_exponent)}; epsilon slope {fmt(rep.epsilon_slope)} "
          f"vs {fmt(rep.epsilon_exponent)}")
    emit(args.out, "converge.csv", csv_text(
        ["n", "z0_scaled", "z1_scaled", "err0", "err1", "theory_exponent", "eps_n"], rows))
    return EXIT_SOLVER if any(r.error for r in rep.rows) else EXIT_OK


FIXTURES = {"experiment_i": calibration.EXPERIMENT_I, "experiment_ii": calibration.EXPERIMENT_II}


def read_stats_file(path: str) -> dict[str, str]:
    """Read a two-column ``name,value`` CSV of summary statistics."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read statistics file: {exc}") from exc
    out: dict[str, str] = {}
    for k, row in enumerate(rows, 1):
        if not row or row[0].strip().startswith("#"):
            continue
        if len(row) != 2:
            raise ConfigError(f"{path}:{k}: expected name,value")
        name, value = row[0].strip(), row[1].strip()
        if k == 1 and (name, value) == ("name", "value"):
            continue
        if name not in STATS_FIELDS:
            raise ConfigError(f"{path}:{k}: unknown statistic {name!r}")
        if name in out:
            raise ConfigError(f"{path}:{k}: duplicate statistic {name!r}")
        out[f"stats.{name}"] = value
    return out


def _stats(cfg: RunConfig) -> calibration.CalibrationStats:
    if cfg.has("calibration.stats_file"):
        from_file = read_stats_file(cfg.text("calibration.stats_file"))
        clash = sorted(set(from_file) & set(cfg.values))
        if clash:
            raise ConfigError(f"statistics given both in the config and the file: {', '.join(clash)}")
        cfg = RunConfig({**cfg.values, **from_file})
    if not any(k.startswith("stats.") for k in cfg.values):
        name = cfg.text("calibration.fixture", "experiment_i")
        if name not in FIXTURES:
            raise ConfigError(f"unknown calibration.fixture {name!r}")
        return FIXTURES[name]

    def opt(key):
        return cfg.number(key) if cfg.has(key) else None

    try:
        return calibration.CalibrationStats(
            insider_volume=cfg.number("stats.insider_volume"),
            sigma=cfg.number("stats.sigma", 1000.0),
            total_volume=opt("stats.total_volume"),
            volume_ratio=opt("stats.volume_ratio"),
            total_volume_stderr=opt("stats.total_volume_stderr"),
            episode_count=cfg.integer("stats.episode_count") if cfg.has("stats.episode_count") else None,
            mu=opt("stats.mu"),
        )
    except calibration.CalibrationError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_calibrate(cfg: RunConfig, args) -> int:
    stats = _stats(cfg)
    default_cond = "e1" if stats.total_volume is not None else "e2"
    chis = [float(c) for c in cfg.text("calibration.chi", "3").split(",")]
    conds = [c.strip() for c in cfg.text("calibration.conditions", default_cond).split(",")]
    rows = []
    for chi in chis:
        for cond in conds:
            try:
                res = calibration.calibrate(stats, chi, cond)
            except (calibration.CalibrationError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
            print(f"chi = {chi:g}, {cond}: N = {res.n_int} ({fmt(res.n_hat)}), gamma = {fmt(res.gamma_hat)}")
            rows.append([chi, cond, res.n_hat, res.n_int, res.gamma_hat, res.mu_hat, res.implied_prosecution])
    emit(args.out, "calibrate.csv", csv_text(
        ["chi", "conditions", "n_hat", "n_int", "gamma_hat", "mu_hat", "implied_prosecution"], rows))
    return EXIT_OK


def cmd_replicate(cfg: RunConfig, args) -> int:
    rep = calibration.replicate_tables(workers=4)
    out = args.out or "."
    emit(out, "table2.csv", csv_text(
        ["chi", "conditions", "n_hat", "n_int", "gamma_hat", "expected_n", "expected_gamma"],
        [[chi, key, r.n_hat, r.n_int, r.gamma_hat, *calibration.TABLE2[(chi, key)]]
         for (chi, key), r in rep.table2.items()]))
    emit(out, "table5.csv", csv_text(
        ["chi", "n_hat", "n_int", "gamma_hat", "expected_n", "expected_gamma"],
        [[chi, r.n_hat, r.n_int, r.gamma_hat, *calibration.TABLE5[chi]] for chi, r in rep.table5.items()]))
    emit(out, "table3.csv", csv_text(
        ["conditions", "z0_finite", "z1_finite", "z0_limiting", "z1_limiting", "expected_finite",
         "expected_limiting"],
        [[key, sol.strategy.z0, sol.strategy.z1, lim.z0, lim.z1, *calibration.TABLE3[key]]
         for key, (sol, lim) in rep.table3.items()]))
    if rep.table6:
        emit(out, "table6.csv", csv_text(
            ["kind", "z0", "z1", "prosecution_percent", "expected_z", "expected_percent"],
            [[kind, rep.table6[kind][0].z0, rep.table6[kind][0].z1, rep.table6[kind][1],
              *calibration.TABLE6[kind]] for kind in ("finite", "limiting")]))
    for fig in rep.figures:
        pc = np.full_like(fig.y, fig.price_constant)
        emit(out, f"{fig.name}.csv", csv_text(["y", "p_n_of_y", "p_const"], zip(fig.y, fig.price_finite, pc)))
        emit(out, f"{fig.name}.svg", svg_lines(f"{fig.name}: equilibrium price vs constant", fig.y,
                                               [("P*_N(y)", fig.price_finite), ("p", pc)]))
    emit(out, "comparisons.csv", csv_text(
        ["name", "computed", "expected", "tol", "passed"],
        [[c.name, c.computed, c.expected, c.tol, c.passed] for c in rep.comparisons]))
    for c in rep.comparisons:
        print(c)
    for e in rep.errors:
        print(f"error: {e}", file=sys.stderr)
    if rep.errors:
        return EXIT_SOLVER
    return EXIT_OK if rep.passed else EXIT_MISMATCH


COMMANDS = {
    "validate": (cmd_validate, "check the hazard and penalty assumptions"),
    "solve": (cmd_solve, "solve the finite-population equilibrium"),
    "limit": (cmd_limit, "solve the limiting equilibrium"),
    "converge": (cmd_converge, "convergence of scaled strategies over a sweep of N"),
    "calibrate": (cmd_calibrate, "method-of-moments estimates of N and gamma"),
    "replicate": (cmd_replicate, "recompute the calibration tables and figures"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kyle-stealth", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", help="output directory for CSV/SVG files (default: stdout)")
        sp.add_argument("--tol", type=float, help="outer solver tolerance")
        sp.add_argument("--n-list", help="comma-separated population sizes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.command not in ("calibrate", "replicate") and args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        if args.tol is not None and not args.tol > 0:
            raise ConfigError("--tol must be positive")
        cfg = RunConfig.load(args.config)
        return func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except equilibrium.AssumptionError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ASSUMPTION
    except (equilibrium.SolverError, NumericsError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
