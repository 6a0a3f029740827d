"""Command line driver: ``fracstef <mode> --config <path> [--out <dir>]``.

The config is a flat ``key = value`` file; ``#`` starts a comment. Every
mode writes ``report.txt``; the solver modes also write ``front.csv`` and
``field.csv``, and ``opcheck`` writes ``opcheck.csv``.

Exit codes: 0 when every recorded invariant passes, 1 when one fails,
2 for configuration or validation errors, 3 when an iteration does not
converge, 4 when a time step fails.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .diagnostics import Diagnostics
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    FracStefError,
    StepError,
    ValidationError,
)
from .mbp import (
    FLUX_METHODS,
    BoundaryTrajectory,
    StefanParams,
    check_initial,
    scaled_cap_data,
    solve_mbp,
)
from .numerics import GridFunction
from .stefan import integral_condition_residual, monotone_dependence_check, solve_stefan
from .studies import (
    REFINEMENT_SIZES,
    format_rows,
    operator_kernel_errors,
    power_rule_errors,
    resolvent_errors,
)

log = logging.getLogger("fracstef")

MODES = ("solve-stefan", "solve-mbp", "convergence", "monotonicity", "opcheck")
U0_FAMILIES = ("zero", "scaled-cap", "file")

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_STEP = 4

#: Minimum decrease of the integral residual per joint refinement.
REFINEMENT_FACTOR = 1.8
#: Operator kernel check: |A x^alpha| relative to the largest matrix entry.
KERNEL_TOL = 1e-13


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    b: float = 1.0
    M: float = 1.0
    T: float = 0.5
    n: int = 129
    dt: float = 0.005
    mode: str | None = None
    u0: str = "scaled-cap"
    theta: float = 1.0
    u0_file: str | None = None
    tol: float = 1e-8
    max_iters: int = 50
    window_length: float | None = None
    restart_fraction: float = 0.5
    flux_method: str = "extrapolate"
    front_rate: float | None = None
    levels: int = 3
    thetas: tuple[float, ...] = (0.25, 0.5, 1.0)
    sizes: tuple[int, ...] = REFINEMENT_SIZES
    field_times: int = 11
    field_nodes: int = 33
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha out of (0,1): {self.alpha}")
        for name in ("b", "M", "T", "dt", "tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.n < 5:
            raise ValidationError("n must be at least 5")
        if self.mode is not None and self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.u0 not in U0_FAMILIES:
            raise ValidationError(f"u0 must be one of {U0_FAMILIES}")
        if not 0.0 < self.theta <= 1.0:
            raise ValidationError(f"theta out of (0,1]: {self.theta}")
        if any(not 0.0 < t <= 1.0 for t in self.thetas):
            raise ValidationError("thetas out of (0,1]")
        if self.u0 == "file" and not self.u0_file:
            raise ValidationError("u0 = file needs u0_file")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")
        if self.window_length is not None and not self.window_length > 0:
            raise ValidationError("window_length must be positive")
        if not 0.0 < self.restart_fraction <= 1.0:
            raise ValidationError("restart_fraction out of (0,1]")
        if self.flux_method not in FLUX_METHODS:
            raise ValidationError(f"flux_method must be one of {FLUX_METHODS}")
        if self.front_rate is not None and not 0.0 <= self.front_rate <= self.M:
            raise ValidationError("front_rate out of [0, M]")
        if self.levels < 2:
            raise ValidationError("levels must be at least 2")
        if len(self.sizes) < 2 or min(self.sizes) < 5:
            raise ValidationError("sizes needs at least two grids of >= 5 nodes")
        if self.field_times < 2 or self.field_nodes < 2:
            raise ValidationError("field_times and field_nodes must be at least 2")

    @property
    def params(self) -> StefanParams:
        return StefanParams(self.alpha, self.b, self.M, self.T, self.n, self.dt)

    def echo(self) -> list[str]:
        out = []
        for f in fields(self):
            if f.name == "base_dir":
                continue
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            out.append(f"{f.name} = {val}")
        return out


_PARSERS = {
    "alpha": float,
    "b": float,
    "M": float,
    "T": float,
    "n": int,
    "dt": float,
    "mode": str,
    "u0": str,
    "theta": float,
    "u0_file": str,
    "tol": float,
    "max_iters": int,
    "window_length": _optional_float,
    "restart_fraction": float,
    "flux_method": str,
    "front_rate": _optional_float,
    "levels": int,
    "thetas": _floats,
    "sizes": _ints,
    "field_times": int,
    "field_nodes": int,
}


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    if "alpha" not in values:
        raise ValidationError("missing required field 'alpha'")
    return RunConfig(base_dir=base_dir, **values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=str(path.parent))


# --------------------------------------------------------------------------
# helpers


def fmt(x) -> str:
    return f"{float(x):.17g}"


def fit_growth(front: BoundaryTrajectory, window: tuple[float, float]) -> tuple[float, float, float]:
    """Fit ``s(t) - b = c t^beta`` by least squares in log-log on ``window``."""
    t0, t1 = window
    mask = (front.times >= t0) & (front.times <= t1) & (front.times > 0)
    t = front.times[mask]
    d = front.s[mask] - front.b
    if t.size < 2 or np.any(d <= 0) or np.ptp(np.log(t)) == 0:
        raise ValidationError("degenerate growth window: need >= 2 times with s > b")
    X, Y = np.log(t), np.log(d)
    beta, logc = np.polyfit(X, Y, 1)
    resid = Y - (beta * X + logc)
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(beta), float(math.exp(logc)), r2


def initial_data(config: RunConfig, params: StefanParams, theta: float | None = None) -> GridFunction:
    if config.u0 == "zero":
        return GridFunction(params.grid, np.zeros(params.n))
    if config.u0 == "scaled-cap":
        return scaled_cap_data(params, config.theta if theta is None else theta)
    path = Path(config.u0_file)
    if not path.is_absolute():
        path = Path(config.base_dir) / path
    try:
        data = np.loadtxt(path, delimiter=None if path.suffix != ".csv" else ",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read initial data {path}: {exc}") from exc
    if data.shape[1] == 1:
        vals = data[:, 0]
        if vals.size != params.n:
            raise ValidationError(f"initial data file has {vals.size} values, expected n={params.n}")
    elif data.shape[1] == 2:
        vals = np.interp(params.grid.nodes * params.b, data[:, 0], data[:, 1])
    else:
        raise ValidationError("initial data file needs one column (u) or two (x, u)")
    return check_initial(GridFunction(params.grid, vals), params)


def _threads() -> int:
    raw = os.environ.get("FRACSTEF_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigurationError(f"FRACSTEF_THREADS must be an integer, got {raw!r}") from exc


@dataclass
class RunReport:
    mode: str
    config: RunConfig
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    histories: dict = field(default_factory=dict)
    info: list = field(default_factory=list)
    timing: float = 0.0
    error_class: str = "none"
    error: str = ""
    exit_code: int = EXIT_OK

    def lines(self) -> list[str]:
        out = [f"mode: {self.mode}", "config:"]
        out += [f"  {line}" for line in self.config.echo()]
        out.append("invariants:")
        for c in self.diagnostics.checks:
            flag = "PASS" if c.passed else "FAIL"
            out.append(f"  {flag} {c.name} margin={c.margin:.6e} {c.detail}".rstrip())
        for name, hist in self.histories.items():
            out.append(f"history {name}: " + " ".join(f"{h:.3e}" for h in hist))
        out += self.info
        out.append(f"timing_seconds: {self.timing:.3f}")
        out.append(f"error_class: {self.error_class}")
        if self.error:
            out.append(f"error: {self.error}")
        out.append(f"status: {'ok' if self.exit_code == EXIT_OK else 'fail'}")
        out.append(f"exit_code: {self.exit_code}")
        return out


def write_front(path: Path, times, s, sdot, flux, residual):
    with open(path, "w") as fh:
        fh.write("t,s,sdot,flux,integral_residual\n")
        for row in zip(times, s, sdot, flux, residual):
            fh.write(",".join(fmt(x) for x in row) + "\n")


def write_field(path: Path, fld, n_times: int, n_nodes: int):
    times = fld.times
    kt = np.unique(np.round(np.linspace(0, times.size - 1, min(n_times, times.size))).astype(int))
    kx = np.unique(np.round(np.linspace(0, fld.params.n - 1, min(n_nodes, fld.params.n))).astype(int))
    with open(path, "w") as fh:
        fh.write("t,x_physical,u\n")
        for k in kt:
            x, u = fld.physical(k)
            for i in kx:
                fh.write(f"{fmt(times[k])},{fmt(x[i])},{fmt(u[i])}\n")


# --------------------------------------------------------------------------
# modes


def _stefan(config: RunConfig, params: StefanParams, u0):
    return solve_stefan(
        params,
        u0,
        tol=config.tol,
        max_iters=config.max_iters,
        window_length=config.window_length,
        restart_fraction=config.restart_fraction,
        flux_method=config.flux_method,
    )


def _write_solution(out: Path, config: RunConfig, sol):
    fld = sol.field
    write_front(out / "front.csv", fld.times, sol.front.s, sol.front.sdot, fld.front_flux, sol.integral_residual)
    write_field(out / "field.csv", fld, config.field_times, config.field_nodes)


def _growth_info(front) -> list[str]:
    try:
        beta, c, r2 = fit_growth(front, (0.0, front.times[-1]))
    except ValidationError:
        return ["growth_fit: not available (front does not move)"]
    return [f"growth_fit (diagnostic only): beta={beta:.6f} c={c:.6e} r2={r2:.6f}"]


def _mode_solve_stefan(config, report, out):
    params = config.params
    sol = _stefan(config, params, initial_data(config, params))
    report.diagnostics.extend(sol.diagnostics)
    report.histories["fixed_point"] = sol.residual_history
    report.info.append(f"iterations: {sol.iterations}")
    report.info.append(f"windows: {sol.windows}")
    report.info.append(f"max_integral_residual: {np.max(np.abs(sol.integral_residual)):.6e}")
    report.info += _growth_info(sol.front.trajectory)
    _write_solution(out, config, sol)


def _mode_solve_mbp(config, report, out):
    params = config.params
    u0 = initial_data(config, params)
    rate = config.front_rate if config.front_rate is not None else 0.5 * params.M
    traj = BoundaryTrajectory.from_function(params.times, lambda t: params.b + rate * t)
    fld = solve_mbp(params, traj, u0, flux_method=config.flux_method)
    report.diagnostics.extend(fld.diagnostics)
    r = integral_condition_residual(fld, u0)
    report.info.append(f"front_rate: {rate}")
    report.info.append(f"max_integral_residual (prescribed front, informational): {np.max(np.abs(r)):.6e}")
    write_front(out / "front.csv", fld.times, fld.trajectory.s, fld.trajectory.sdot, fld.front_flux, r)
    write_field(out / "field.csv", fld, config.field_times, config.field_nodes)


def _mode_convergence(config, report, out):
    base = config.params
    residuals = []
    sol = None
    for k in range(config.levels):
        params = base.replace(n=(base.n - 1) * 2**k + 1, dt=base.dt / 2**k)
        sol = _stefan(config, params, initial_data(config, params))
        report.diagnostics.extend(sol.diagnostics, prefix=f"level{k}:")
        residuals.append(float(np.max(np.abs(sol.integral_residual))))
        report.info.append(
            f"level {k}: n={params.n} dt={params.dt:.6g} iterations={sol.iterations} "
            f"max_integral_residual={residuals[-1]:.6e} s(T)={sol.front.s[-1]:.12f}"
        )
    report.histories["integral_residual"] = residuals
    for k in range(1, len(residuals)):
        if residuals[k] == 0.0:
            ratio = math.inf if residuals[k - 1] > 0 else REFINEMENT_FACTOR
        else:
            ratio = residuals[k - 1] / residuals[k]
        margin = ratio - REFINEMENT_FACTOR if math.isfinite(ratio) else 1.0
        report.diagnostics.record(f"refinement_ratio_{k}", margin, f"ratio={ratio:.4f}")
    _write_solution(out, config, sol)


def _mode_monotonicity(config, report, out):
    params = config.params
    thetas = sorted(config.thetas)
    workers = min(_threads(), len(thetas))

    def job(theta):
        return _stefan(config, params, initial_data(config, params, theta=theta))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(job, thetas))
    for theta, sol in zip(thetas, runs):
        report.diagnostics.extend(sol.diagnostics, prefix=f"theta={theta:g}:")
        report.info.append(f"theta={theta:g}: s(T)={sol.front.s[-1]:.12f} iterations={sol.iterations}")
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            rep = monotone_dependence_check(runs[i], runs[j])
            report.diagnostics.record(
                f"ordered theta={thetas[i]:g}<={thetas[j]:g}",
                rep.tol - rep.max_excess,
                f"max(s_low - s_high)={rep.max_excess:.3e} tol={rep.tol:.3e} delta={rep.data_gap:.3e}",
            )
    _write_solution(out, config, runs[-1])


def _mode_opcheck(config, report, out):
    alpha = config.alpha
    sizes = config.sizes
    rows = []
    for beta in (1.0, 2.0, 3.0):
        r = power_rule_errors("integral", alpha, beta, sizes)
        rows.append(r)
        report.diagnostics.record(f"power_integral_beta{beta:g}", r.min_order - 1.5, f"min order {r.min_order:.3f}")
    for beta in (1.0, 2.0, 3.0):
        r = power_rule_errors("caputo", alpha, beta, sizes)
        rows.append(r)
        need = 2.0 - alpha - 0.1
        report.diagnostics.record(f"power_caputo_beta{beta:g}", r.min_order - need, f"min order {r.min_order:.3f}")
    from .fracops import assemble_operator
    from .numerics import Grid

    kern = operator_kernel_errors(alpha, sizes)
    rows.append(kern)
    scale = [float(np.max(np.abs(assemble_operator(alpha, Grid(n)).entries))) for n in sizes]
    rel = max(e / s for e, s in zip(kern.errors, scale))
    report.diagnostics.record("operator_kernel", KERNEL_TOL - rel, f"max |A x^alpha| / max|A| = {rel:.3e}")
    for lam in (0.0, -1.0, -10.0):
        for label, g in (("1", lambda x: np.ones_like(x)), ("sin", lambda x: np.sin(np.pi * x))):
            r = resolvent_errors(alpha, lam, g, label, sizes)
            rows.append(r)
            report.diagnostics.record(
                f"resolvent lambda={lam:g} g={label}", r.min_order - 1.0, f"min order {r.min_order:.3f}"
            )
    report.info.append("table:")
    report.info += ["  " + line for line in format_rows(rows).splitlines()]
    with open(out / "opcheck.csv", "w") as fh:
        fh.write("label,n,error,order\n")
        for r in rows:
            orders = [math.nan] + list(r.orders)
            for n, e, o in zip(r.sizes, r.errors, orders):
                fh.write(f"{r.label},{n},{fmt(e)},{fmt(o)}\n")


_DISPATCH = {
    "solve-stefan": _mode_solve_stefan,
    "solve-mbp": _mode_solve_mbp,
    "convergence": _mode_convergence,
    "monotonicity": _mode_monotonicity,
    "opcheck": _mode_opcheck,
}


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(exc, StepError):
        return EXIT_STEP
    if isinstance(exc, (ConfigurationError, ValidationError, DomainError)):
        return EXIT_VALIDATION
    return EXIT_STEP


def run(config: RunConfig, mode: str, out_dir) -> RunReport:
    """Execute ``mode``, write its artifacts into ``out_dir`` and return the report."""
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if config.mode is not None and config.mode != mode:
        raise ValidationError(f"config mode {config.mode!r} does not match {mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(mode, config)
    start = time.perf_counter()
    try:
        _DISPATCH[mode](config, report, out)
    except FracStefError as exc:
        report.error_class = exc.error_class
        report.error = str(exc)
        report.exit_code = _exit_code_for(exc)
        if isinstance(exc, ConvergenceError):
            report.histories["fixed_point"] = exc.history
    else:
        report.exit_code = EXIT_OK if report.diagnostics.passed else EXIT_INVARIANT
    report.timing = time.perf_counter() - start
    (out / "report.txt").write_text("\n".join(report.lines()) + "\n")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fracstef", description="Space-fractional Stefan problem solver")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="flat key = value config file")
    parser.add_argument("--out", default="fracstef_out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
    except (ConfigurationError, ValidationError) as exc:
        print(f"fracstef: {exc.error_class} error: {exc}", file=sys.stderr)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(
            f"mode: {args.mode}\nerror_class: {exc.error_class}\nerror: {exc}\nstatus: fail\nexit_code: {EXIT_VALIDATION}\n"
        )
        return EXIT_VALIDATION
    try:
        report = run(config, args.mode, args.out)
    except ValidationError as exc:
        print(f"fracstef: {exc.error_class} error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for c in report.diagnostics.failures():
        log.warning("invariant %s failed (margin %.3e)", c.name, c.margin)
    if report.error:
        print(f"fracstef: {report.error_class} error: {report.error}", file=sys.stderr)
    log.info("wrote %s", args.out)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
