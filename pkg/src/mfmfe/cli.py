"""Command line: convergence studies, element checks, timing and export.

    mfmfe convergence --example 1 --method mfmfe --k 2 --levels 0..4 --out ex1.csv
    mfmfe check-element --k 3 --d 3
    mfmfe timing --example 1 --k 2 --levels 1..4
    mfmfe export --example 1 --k 2 --level 1 --out-prefix sys
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass

import numpy as np

from .mesh import example1_mesh, example2_mesh, write_mesh
from .refbasis import build_rt_basis, element_report
from .solver import ConvergenceError, EliminationError, solve_mfmfe, solve_rt
from .verify import CASES, CSV_COLUMNS, ERROR_NAMES, error_norms, fitted_rate, rates

DEFAULT_LEVELS = {1: (0, 4), 2: (0, 2)}
MESHES = {1: example1_mesh, 2: example2_mesh}


@dataclass
class RunConfig:
    example: int = 1
    method: str = "mfmfe"
    k: int = 2
    levels: tuple = (0, 4)
    tol: float = 1e-12
    out: str | None = None
    deterministic: bool = False
    quad_order: int | None = None

    def validate(self):
        if self.example not in MESHES:
            raise ValueError("example must be 1 (2d) or 2 (3d)")
        if self.method not in ("mfmfe", "rt"):
            raise ValueError("method must be mfmfe or rt")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        lo, hi = self.levels
        if lo < 0 or hi < lo:
            raise ValueError(f"empty level range {lo}..{hi}")
        if self.quad_order is not None and self.quad_order < 1:
            raise ValueError("quad order must be >= 1")
        return self

    @property
    def dim(self):
        return 2 if self.example == 1 else 3


def parse_levels(text):
    """'A..B' or a single level 'A'."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return int(a), int(b)
        return int(text), int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like A..B, got {text!r}") from None


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(1)


def run_level(config: RunConfig, level: int):
    case = CASES[config.example]()
    mesh = MESHES[config.example](level)
    solve = solve_mfmfe if config.method == "mfmfe" else solve_rt
    sol = solve(mesh, case, config.k, tol=config.tol, quad_order=config.quad_order)
    rec = error_norms(sol, case, quad_order=config.quad_order, level=level)
    rec.cg_iters = sol.stats.iterations
    rec.assemble_s = sol.stats.assemble_s
    rec.solve_s = sol.stats.solve_s
    return rec


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(v)
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.6e}"


def write_csv(records, fh):
    w = csv.writer(fh)
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def format_table(records):
    cols = ["level", "h"] + [f"err_{n}" for n in ERROR_NAMES] + ["cg_iters"]
    lines = ["  ".join(f"{c:>10}" for c in cols)]
    for r in records:
        cells = [f"{r.level:>10d}", f"{r.h:>10.4g}"]
        for n in ERROR_NAMES:
            e, rt = getattr(r, f"err_{n}"), getattr(r, f"rate_{n}")
            cells.append(f"{e:>10.3e}")
            if not math.isnan(rt):
                cells[-1] = f"{e:.2e}({rt:.1f})".rjust(10)
        cells.append(f"{r.cg_iters:>10d}")
        lines.append("  ".join(cells))
    if len(records) >= 2:
        hs = [r.h for r in records]
        fit = [fitted_rate(hs, [getattr(r, f"err_{n}") for r in records]) for n in ERROR_NAMES]
        lines.append("least-squares rates: " + ", ".join(f"{n}={v:.2f}" for n, v in zip(ERROR_NAMES, fit)))
    return "\n".join(lines)


def run_convergence(config: RunConfig, stream=sys.stdout):
    """Run all levels; returns (records, exit code)."""
    config.validate()
    limiter = _single_thread() if config.deterministic else None
    records, code = [], 0
    try:
        for level in range(config.levels[0], config.levels[1] + 1):
            try:
                records.append(run_level(config, level))
            except (ConvergenceError, EliminationError, np.linalg.LinAlgError) as exc:
                print(f"level {level}: solver failure: {exc}", file=sys.stderr)
                code = 2
                break
    finally:
        if limiter is not None:
            limiter.unregister()
    if len(records) >= 2:
        rates(records)
    if config.out:
        with open(config.out, "w", newline="") as fh:
            write_csv(records, fh)
    print(f"example {config.example}, method {config.method}, k={config.k}", file=stream)
    print(format_table(records), file=stream)
    return records, code


def check_element(k: int, d: int, stream=sys.stdout):
    rep = element_report(k, d)
    rt = build_rt_basis(k - 1, d)
    print(f"enhanced element k={k} d={d}", file=stream)
    print(f"  dimension              {rep.dim} (expected {rep.expected_dim})", file=stream)
    print(f"  cond, Gauss-Lobatto    {rep.gl_cond:.3e}", file=stream)
    print(f"  cond, moment DOFs      {rep.moment_cond:.3e}", file=stream)
    print(f"  direct-sum rank        {rep.direct_sum_rank} = {rep.rt_dim} + {rep.bubble_dim}", file=stream)
    print(f"  div outside Q^(k-1)    {rep.div_residual:.3e}", file=stream)
    print(f"  trace outside R^k      {rep.trace_residual:.3e}", file=stream)
    print(f"  quadrature orthogonal  {rep.quad_orth_residual:.3e}", file=stream)
    print(f"  RT_{k - 1} nodal cond       {rt.vandermonde_cond:.3e}", file=stream)
    failed = [name for name, ok in rep.checks.items() if not ok]
    for name, ok in rep.checks.items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}", file=stream)
    return rep, (1 if failed else 0)


TIMING_COLUMNS = [
    "level",
    "h",
    "mfmfe_assemble_s",
    "mfmfe_solve_s",
    "mfmfe_total_s",
    "mfmfe_factor",
    "mfmfe_cg_iters",
    "rt_assemble_s",
    "rt_solve_s",
    "rt_total_s",
    "rt_factor",
    "rt_cg_iters",
]


def run_timing(example: int, k: int, levels, tol=1e-12, out=None, stream=sys.stdout):
    """Wall times of both methods per level and the per-level growth factor."""
    rows = []
    prev = {}
    for level in range(levels[0], levels[1] + 1):
        row = {"level": level}
        for method in ("mfmfe", "rt"):
            rec = run_level(RunConfig(example, method, k, (level, level), tol), level)
            total = rec.assemble_s + rec.solve_s
            row["h"] = rec.h
            row[f"{method}_assemble_s"] = rec.assemble_s
            row[f"{method}_solve_s"] = rec.solve_s
            row[f"{method}_total_s"] = total
            row[f"{method}_factor"] = total / prev[method] if method in prev else math.nan
            row[f"{method}_cg_iters"] = rec.cg_iters
            prev[method] = total
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(TIMING_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in TIMING_COLUMNS])
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    print(buf.getvalue(), end="", file=stream)
    return rows


def export(example: int, k: int, level: int, prefix: str):
    """Write the mesh and the MFMFE system (A blocks, B, G and F) as text."""
    from .assembly import export_system

    mesh = MESHES[example](level)
    case = CASES[example]()
    sol = solve_mfmfe(mesh, case, k, keep_system=True)
    write_mesh(mesh, f"{prefix}_mesh.txt")
    s = sol.system
    export_system(prefix, s["A"], s["B"], s["G"], s["F"])
    return sol


def build_parser():
    p = argparse.ArgumentParser(prog="mfmfe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method=True):
        sp.add_argument("--example", type=int, choices=(1, 2), default=1)
        if method:
            sp.add_argument("--method", choices=("mfmfe", "rt"), default="mfmfe")
        sp.add_argument("--k", type=int, default=2)
        sp.add_argument("--levels", type=parse_levels, default=None, help="A..B")
        sp.add_argument("--tol", type=float, default=1e-12)
        sp.add_argument("--out", default=None, help="CSV output path")
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--quad-order", type=int, default=None)

    common(sub.add_parser("convergence", help="error and rate table"))
    common(sub.add_parser("timing", help="MFMFE vs RT wall times"), method=False)
    ce = sub.add_parser("check-element", help="reference element self-checks")
    ce.add_argument("--k", type=int, default=2)
    ce.add_argument("--d", type=int, choices=(2, 3), default=2)
    ex = sub.add_parser("export", help="write mesh and linear system as text")
    ex.add_argument("--example", type=int, choices=(1, 2), default=1)
    ex.add_argument("--k", type=int, default=2)
    ex.add_argument("--level", type=int, default=0)
    ex.add_argument("--out-prefix", default="mfmfe")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check-element":
            if not 1 <= args.k <= 4:
                print("warning: only k = 1..4 is tested", file=sys.stderr)
            return check_element(args.k, args.d)[1]
        if args.command == "export":
            export(args.example, args.k, args.level, args.out_prefix)
            return 0
        levels = args.levels or DEFAULT_LEVELS[args.example]
        if args.command == "timing":
            run_timing(args.example, args.k, levels, args.tol, args.out)
            return 0
        config = RunConfig(
            args.example, args.method, args.k, levels, args.tol, args.out, args.deterministic, args.quad_order
        )
        return run_convergence(config)[1]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
