"""Command-line front end: run, verify, reference and report.

Configuration files are flat ``key = value`` text with ``#`` comments;
unknown keys are rejected with their line number.  ``run`` streams one CSV
row per adaptive step (flushed immediately so a crash loses nothing),
optionally dumps per-step VTK fields, and finishes with a short text
summary.  ``reference`` recomputes the quantity reference values from a
uniform enriched-space refinement sequence with extrapolation, writing a
key-value file that ``run`` can consume.  ``report`` renders convergence
figures from the CSV files next to them.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapt, goals, model, solver, spaces, verify, vtkio

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step,dofs_primal,eta_h,eta_primal,eta_adjoint,iter_err,"
    "J1,J2,J3,J4,J5,Jc,relerr1,relerr2,relerr3,relerr4,relerr5,abserr_Jc,Ieff"
)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """File-backed settings of one experiment."""

    mode: str = "adaptive"
    max_dofs: int = 300_000
    max_steps: int = 40
    theta: float = 0.5
    f: float = 10.0
    epsilon: float = 1e-10
    newton_abs_tol: float = 1e-11
    quad_order_cubic: int | None = 6
    quad_order_power: int | None = 8
    quad_order_rational: int | None = 6
    quad_order_laplace: int | None = None  # auto: twice the degree
    reference_j1: float = goals.DEFAULT_REFERENCE_VALUES[0]
    reference_j2: float = goals.DEFAULT_REFERENCE_VALUES[1]
    reference_j3: float = goals.DEFAULT_REFERENCE_VALUES[2]
    reference_j4: float = goals.DEFAULT_REFERENCE_VALUES[3]
    reference_j5: float = goals.DEFAULT_REFERENCE_VALUES[4]
    reference_file: str = ""
    reference_budget: int = 300_000
    output_dir: str = "out"
    dump_fields: bool = False

    def model_params(self) -> model.ModelParams:
        return model.ModelParams(
            f=self.f,
            epsilon=self.epsilon,
            quad_orders={
                "cubic": self.quad_order_cubic,
                "power": self.quad_order_power,
                "rational": self.quad_order_rational,
                "laplace": self.quad_order_laplace,
            },
        )

    def newton_config(self) -> solver.NewtonConfig:
        return solver.NewtonConfig(abs_tol=self.newton_abs_tol)

    def adapt_config(self) -> adapt.AdaptConfig:
        return adapt.AdaptConfig(
            max_dofs=self.max_dofs,
            max_steps=self.max_steps,
            theta=self.theta,
            mode=self.mode,
        )

    def reference_values(self) -> np.ndarray:
        if self.reference_file:
            loaded = _read_reference_file(Path(self.reference_file))
            return np.array([loaded[f"J{k}"] for k in range(1, 6)])
        return np.array(
            [
                self.reference_j1,
                self.reference_j2,
                self.reference_j3,
                self.reference_j4,
                self.reference_j5,
            ]
        )


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(key: str, text: str, kind, lineno: int):
    try:
        if kind == "bool":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[text.lower()]
        if kind == "int":
            return int(text)
        if kind == "optint":
            return None if text.lower() == "auto" else int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(
            f"line {lineno}: value {text!r} for key {key!r} is not a valid {kind}"
        ) from None


_KEY_KINDS = {
    "mode": "str",
    "max_dofs": "int",
    "max_steps": "int",
    "theta": "float",
    "f": "float",
    "epsilon": "float",
    "newton_abs_tol": "float",
    "quad_order_cubic": "optint",
    "quad_order_power": "optint",
    "quad_order_rational": "optint",
    "quad_order_laplace": "optint",
    "reference_j1": "float",
    "reference_j2": "float",
    "reference_j3": "float",
    "reference_j4": "float",
    "reference_j5": "float",
    "reference_file": "str",
    "reference_budget": "int",
    "output_dir": "str",
    "dump_fields": "bool",
}


def parse_config(path) -> RunConfig:
    """Parse and validate a key-value configuration file."""
    cfg = RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEY_KINDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, value, _KEY_KINDS[key], lineno))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.mode not in ("adaptive", "uniform"):
        raise ConfigError(f"mode must be adaptive or uniform, got {cfg.mode!r}")
    if not (cfg.epsilon > 0.0):
        raise ConfigError("epsilon must be positive")
    if not (0.0 < cfg.theta < 1.0):
        raise ConfigError("theta must lie in (0, 1)")
    if cfg.max_dofs < 1 or cfg.max_steps < 0:
        raise ConfigError("max_dofs and max_steps must be positive")
    if not (cfg.newton_abs_tol <= 1e-10):
        raise ConfigError("newton_abs_tol must not exceed 1e-10")
    for key in ("quad_order_cubic", "quad_order_power", "quad_order_rational",
                "quad_order_laplace"):
        val = getattr(cfg, key)
        if val is not None and val < 1:
            raise ConfigError(f"{key} must be at least 1 or 'auto'")


def _read_reference_file(path: Path) -> dict[str, float]:
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = float(value.strip())
    missing = [f"J{k}" for k in range(1, 6) if f"J{k}" not in out]
    if missing:
        raise ConfigError(f"reference file {path} lacks keys {missing}")
    return out


def _fmt(x: float | None) -> str:
    return "nan" if x is None else f"{x:.17g}"


def _csv_row(r: adapt.ConvergenceRecord) -> str:
    parts = [str(r.step), str(r.dofs_primal)]
    parts += [_fmt(v) for v in (r.eta_h, r.eta_primal, r.eta_adjoint, r.iteration_error)]
    parts += [_fmt(v) for v in r.qoi_values]
    parts.append(_fmt(r.jc_value))
    parts += [_fmt(v) for v in r.rel_errors]
    parts.append(_fmt(r.jc_abs_error))
    parts.append(_fmt(r.effectivity))
    return ",".join(parts)


def _fit_slope(dofs, values, last=10):
    """Least-squares slope of log(values) against log(dofs)."""
    dofs = np.asarray(dofs, float)
    values = np.asarray(values, float)
    keep = values > 0
    dofs, values = dofs[keep], values[keep]
    if len(dofs) < 2:
        return float("nan")
    dofs, values = dofs[-last:], values[-last:]
    return float(np.polyfit(np.log(dofs), np.log(values), 1)[0])


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = cfg.reference_values()
    csv_path = out_dir / "convergence.csv"
    fh = open(csv_path, "w")
    fh.write(CSV_COLUMNS + "\n")
    fh.flush()

    def on_step(state: adapt.StepState):
        fh.write(_csv_row(state.record) + "\n")
        fh.flush()
        if cfg.dump_fields:
            rep = state.report
            vtkio.write_vtk(
                out_dir / f"step_{state.record.step:03d}.vtk",
                state.mesh,
                point_data={
                    "u": vtkio.vertex_values(state.u_h),
                    "z": vtkio.vertex_values(state.z_h),
                    "indicator": vtkio.dof_values_to_vertices(
                        state.space_q1, rep.vertex_indicators
                    ),
                    "indicator_primal": vtkio.dof_values_to_vertices(
                        state.space_q1, rep.vertex_primal
                    ),
                    "indicator_adjoint": vtkio.dof_values_to_vertices(
                        state.space_q1, rep.vertex_adjoint
                    ),
                },
                cell_data={"cell_indicator": rep.cell_indicators},
            )

    try:
        records = adapt.run(
            cfg.adapt_config(),
            cfg.model_params(),
            reference=reference,
            newton=cfg.newton_config(),
            on_step=on_step,
        )
    except RuntimeError as exc:
        fh.close()
        print(f"error: solve aborted: {exc}", file=sys.stderr)
        return 1
    fh.close()

    final = records[-1]
    dofs = [r.dofs_primal for r in records]
    lines = [f"mode: {cfg.mode}", f"steps: {len(records) - 1}",
             f"final dofs: {final.dofs_primal}"]
    for k in range(5):
        lines.append(
            f"J{k + 1}: {final.qoi_values[k]:.12f}  "
            f"(reference {reference[k]:.12f}, rel err {final.rel_errors[k]:.3e})"
        )
    lines.append(f"final eta_h: {final.eta_h:.6e}")
    lines.append(f"final effectivity: {_fmt(final.effectivity)}")
    lines.append(
        "slope |Jc error|: "
        f"{_fit_slope(dofs, [r.jc_abs_error for r in records]):.3f}"
    )
    for k in range(5):
        slope = _fit_slope(dofs, [r.rel_errors[k] for r in records])
        lines.append(f"slope relerr J{k + 1}: {slope:.3f}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    results = verify.run_all(cfg.model_params(), cfg.newton_config())
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def cmd_reference(cfg: RunConfig, out_dir: Path) -> int:
    params = cfg.model_params()
    newton = cfg.newton_config()
    budget = cfg.reference_budget
    from .mesh import initial_mesh, refine

    values, dofs = [], []
    mesh = initial_mesh()
    prev = None
    while True:
        space = spaces.build_space(mesh, 2)
        if dofs and space.n_dofs > budget:
            break
        u0 = spaces.transfer(prev, space) if prev is not None else None
        u = solver.newton_solve(space, params, u0=u0, cfg=newton)
        values.append([goals.evaluate_qoi(k, u) for k in range(1, 6)])
        dofs.append(space.n_dofs)
        logger.info("reference level: %d dofs", space.n_dofs)
        prev = u
        mesh = refine(mesh, set(mesh.active_cells))
    if len(values) < 3:
        print(
            f"error: budget {budget} allows only {len(values)} uniform levels; "
            "need at least 3 for extrapolation",
            file=sys.stderr,
        )
        return 1
    j = np.asarray(values[-3:])
    n = np.asarray(dofs[-3:], dtype=float)
    # eliminate the leading error term, assumed to decay like 1/dofs
    r_prev = j[1] + (j[1] - j[0]) / (n[1] / n[0] - 1.0)
    r_last = j[2] + (j[2] - j[1]) / (n[2] / n[1] - 1.0)
    spread = np.abs(r_last - r_prev)

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "reference.txt"
    lines = ["# extrapolated quantity reference values"]
    lines.append(f"# uniform levels used: dofs {dofs[-3]}, {dofs[-2]}, {dofs[-1]}")
    for k in range(5):
        lines.append(f"J{k + 1} = {r_last[k]:.17g}")
        lines.append(f"# J{k + 1} extrapolation spread: {spread[k]:.3e}")
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
    for k in range(5):
        print(f"J{k + 1} = {r_last[k]:.12f}  (spread {spread[k]:.2e})")
    return 0


def cmd_report(csv_paths: list[str], out_dir: Path) -> int:
    from . import report

    try:
        written = report.render(csv_paths, out_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="checkerfem",
        description="goal-adaptive finite elements for the checkerboard model",
    )
    parser.add_argument("--log", default="warning", help="log level (debug..error)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "reference"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to a key-value config file")
        p.add_argument("--output", help="output directory (overrides config)")
        if name == "run":
            p.add_argument(
                "--dump-fields",
                action="store_true",
                help="write per-step VTK files with fields and indicators",
            )
    p = sub.add_parser("report")
    p.add_argument("csv", nargs="+", help="convergence CSV file(s); "
                   "a second file is treated as the uniform baseline")
    p.add_argument("--output", help="output directory (defaults beside the CSV)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=getattr(logging, args.log.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "report":
        out = Path(args.output) if args.output else Path(args.csv[0]).parent
        return cmd_report(args.csv, out)

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "dump_fields", False):
        cfg.dump_fields = True
    out_dir = Path(args.output) if args.output else Path(cfg.output_dir)

    if args.command == "run":
        return cmd_run(cfg, out_dir)
    if args.command == "verify":
        return cmd_verify(cfg)
    return cmd_reference(cfg, out_dir)


if __name__ == "__main__":
    sys.exit(main())
