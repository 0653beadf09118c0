"""Command-line harness for eigenvalue runs, convergence studies, complex
audits, and mixed-versus-primal comparisons.

Exit codes: 0 success, 1 tolerance or check failure, 2 invalid
configuration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    assemble_divdiv,
    assemble_scalar_mass,
    assemble_scalar_stiffness,
    assemble_vector_mass,
    write_matrix_market,
)
from .audit import exactness_check, spurious_scan, square_exact_spectrum
from .eigsolve import (
    SolverError,
    cluster_eigenvalues,
    solve_fem1,
    solve_fem2,
    solve_primal,
)
from .fespace import build_scalar_space, build_vector_space
from .mesh import (
    MeshError,
    build_lshape_grid,
    build_rect_grid,
    criss_cross,
    mesh_stats,
    perturb_quad_grid,
    write_mesh_text,
)
from .refelem import quad_rule

__all__ = ["StudyConfig", "StudyReport", "LevelResult", "ConfigError",
           "cmd_eig", "cmd_converge", "cmd_audit", "cmd_compare", "main"]

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

DOMAINS = ("square", "lshape", "square-perturbed")
FORMS = ("fem1", "fem2", "primal")
CSV_HEADER = "level,h,index,lambda_h,exact,abs_error,rate"


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass
class StudyConfig:
    domain: str = "square"
    degree: int = 2
    formulation: str = "fem2"
    levels: list = field(default_factory=lambda: [8])
    n_eigs: int = 10
    backend: str = "dense"
    sigma: float = 1.0
    tol_zero: float = 1e-9
    seed: int = 42
    perturb: float = 0.15
    exact: list | None = None
    expect_rate: tuple | None = None
    out: str | None = None
    export_mesh: str | None = None
    export_matrices: str | None = None

    def validate(self) -> "StudyConfig":
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.formulation not in FORMS:
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.degree not in (1, 2, 3):
            raise ConfigError("degree must be 1, 2 or 3")
        if self.formulation == "fem1" and self.degree not in (2, 3):
            raise ConfigError("fem1 requires degree 2 or 3")
        if not self.levels or any(n < 1 for n in self.levels):
            raise ConfigError("levels must be positive integers")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("levels must be strictly increasing")
        if self.n_eigs < 1:
            raise ConfigError("n_eigs must be at least 1")
        if self.backend not in ("dense", "lanczos"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        return self


@dataclass
class LevelResult:
    level: int
    h: float
    lambdas: np.ndarray
    exact: np.ndarray | None
    errors: np.ndarray | None
    rates: np.ndarray | None      # vs previous level, where h halves
    runtime: float


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for row in self.rows:
            for i, lam in enumerate(row.lambdas):
                exact = "" if row.exact is None else f"{row.exact[i]:.17g}"
                err = "" if row.errors is None else f"{row.errors[i]:.17g}"
                rate = ""
                if row.rates is not None and not math.isnan(row.rates[i]):
                    rate = f"{row.rates[i]:.17g}"
                lines.append(
                    f"{row.level},{row.h:.17g},{i + 1},{lam:.17g},{exact},{err},{rate}"
                )
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def build_mesh(config: StudyConfig, n: int):
    if config.domain == "square":
        qmesh = build_rect_grid(0.0, 0.0, math.pi, math.pi, n, n)
    elif config.domain == "square-perturbed":
        qmesh = build_rect_grid(0.0, 0.0, math.pi, math.pi, n, n)
        qmesh = perturb_quad_grid(qmesh, config.perturb, config.seed)
    else:
        qmesh = build_lshape_grid(n)
    return criss_cross(qmesh)


def _exact_targets(config: StudyConfig) -> np.ndarray | None:
    if config.domain in ("square", "square-perturbed"):
        return square_exact_spectrum(config.n_eigs)
    if config.exact:
        pad = np.full(config.n_eigs, np.nan)
        vals = np.asarray(config.exact, dtype=float)[: config.n_eigs]
        pad[: len(vals)] = vals
        return pad
    return None


def _solve(config: StudyConfig, tmesh):
    if config.formulation == "fem2":
        return solve_fem2(
            tmesh, config.degree, config.n_eigs, config.backend,
            sigma=config.sigma, tol_zero=config.tol_zero, seed=config.seed,
        )
    if config.formulation == "fem1":
        return solve_fem1(tmesh, config.degree, config.n_eigs,
                          tol_zero=config.tol_zero)
    return solve_primal(tmesh, config.degree, config.n_eigs)


def _run_level(config: StudyConfig, n: int) -> LevelResult:
    t0 = time.perf_counter()
    tmesh = build_mesh(config, n)
    spec = _solve(config, tmesh)
    runtime = time.perf_counter() - t0
    lambdas = spec.eigenvalues[: config.n_eigs]
    exact = _exact_targets(config)
    errors = None
    if exact is not None:
        errors = np.abs(exact[: len(lambdas)] - lambdas)
    return LevelResult(
        level=n,
        h=mesh_stats(tmesh).h,
        lambdas=lambdas,
        exact=None if exact is None else exact[: len(lambdas)],
        errors=errors,
        rates=None,
        runtime=runtime,
    )


def _attach_rates(rows: list) -> None:
    for prev, cur in zip(rows, rows[1:]):
        if cur.level != 2 * prev.level:
            continue
        if prev.errors is None or cur.errors is None:
            continue
        m = min(len(prev.errors), len(cur.errors))
        rates = np.full(len(cur.lambdas), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            rates[:m] = np.log2(prev.errors[:m] / cur.errors[:m])
        cur.rates = rates


def _export_artifacts(config: StudyConfig, n: int) -> None:
    if not (config.export_mesh or config.export_matrices):
        return
    tmesh = build_mesh(config, n)
    if config.export_mesh:
        write_mesh_text(tmesh, config.export_mesh)
    if config.export_matrices:
        rule = quad_rule(2 * config.degree)
        stem = config.export_matrices
        if config.formulation == "primal":
            space = build_scalar_space(tmesh, config.degree)
            write_matrix_market(
                assemble_scalar_stiffness(space, tmesh, rule), stem + "_K.mtx")
            write_matrix_market(
                assemble_scalar_mass(space, tmesh, rule), stem + "_M.mtx")
        else:
            space = build_vector_space(tmesh, config.degree)
            write_matrix_market(
                assemble_divdiv(space, tmesh, rule), stem + "_B.mtx")
            write_matrix_market(
                assemble_vector_mass(space, tmesh, rule), stem + "_A.mtx")


def cmd_eig(config: StudyConfig) -> tuple[StudyReport, int]:
    """Single-level eigenvalue table with errors against known targets."""
    config.validate()
    if len(config.levels) != 1:
        raise ConfigError("eig expects exactly one level")
    row = _run_level(config, config.levels[0])
    _export_artifacts(config, config.levels[0])
    report = StudyReport(config, [row])
    _print_eig_table(row)
    clusters = cluster_eigenvalues(row.lambdas)
    doublets = [c for c in clusters if c[1] > 1]
    if doublets:
        print("clusters:", ", ".join(
            f"{val:.12g} (x{mult})" for val, mult in doublets))
    return report, EXIT_OK


def _print_eig_table(row: LevelResult) -> None:
    print(f"level n={row.level}  h={row.h:.6g}  ({row.runtime:.2f}s)")
    print(f"{'i':>3} {'lambda_h':>22} {'exact':>10} {'abs_error':>14}")
    for i, lam in enumerate(row.lambdas):
        exact = f"{row.exact[i]:.6g}" if row.exact is not None else ""
        err = f"{row.errors[i]:.8e}" if row.errors is not None else ""
        print(f"{i + 1:>3} {lam:>22.16g} {exact:>10} {err:>14}")


def cmd_converge(config: StudyConfig) -> tuple[StudyReport, int]:
    """Multi-level refinement study with per-mode convergence rates."""
    config.validate()
    if len(config.levels) < 2:
        raise ConfigError("converge expects at least two levels")
    if _exact_targets(config) is None:
        raise ConfigError("converge needs exact targets (square domain or --exact)")
    rows = [_run_level(config, n) for n in config.levels]
    _attach_rates(rows)
    report = StudyReport(config, rows)
    code = EXIT_OK
    print(f"{'n':>5} {'h':>12} {'lambda_1':>22} {'error_1':>14} {'rate_1':>8}")
    for row in rows:
        rate = ""
        if row.rates is not None and not math.isnan(row.rates[0]):
            rate = f"{row.rates[0]:.4f}"
        print(f"{row.level:>5} {row.h:>12.6g} {row.lambdas[0]:>22.16g} "
              f"{row.errors[0]:>14.6e} {rate:>8}")
    if config.expect_rate is not None:
        lo, hi = config.expect_rate
        last = rows[-1].rates
        rate1 = last[0] if last is not None else math.nan
        if not (lo <= rate1 <= hi):
            print(f"rate check FAILED: {rate1:.4f} outside [{lo}, {hi}]")
            code = EXIT_TOLERANCE
        else:
            print(f"rate check passed: {rate1:.4f} in [{lo}, {hi}]")
    return report, code


def cmd_audit(config: StudyConfig) -> int:
    """Exactness audit (k = 2, 3) and spurious scan (square, >= 2 levels)."""
    config.validate()
    ok = True
    if config.degree in (2, 3):
        tmesh = build_mesh(config, config.levels[0])
        report = exactness_check(tmesh, config.degree)
        for line in report.lines():
            print("exactness:", line)
        print("exactness:", "PASS" if report.passed else "FAIL")
        ok &= report.passed
    if config.domain == "square" and len(config.levels) >= 2:
        scan = spurious_scan("square", config.degree, config.levels,
                             config.n_eigs)
        for h, vals in scan.levels:
            print(f"spurious: h={h:.6g} spectrum prefix "
                  + " ".join(f"{v:.6g}" for v in vals))
        for lam, d_f, d_c in scan.flags:
            print(f"spurious: flagged {lam:.8g} (distance {d_f:.3g}, "
                  f"previous {d_c:.3g})")
        # degree 1 must exhibit the failure; higher degrees must not
        expected_clean = config.degree != 1
        scan_ok = scan.clean == expected_clean
        print(f"spurious: {len(scan.flags)} flagged, "
              + ("PASS" if scan_ok else "FAIL"))
        ok &= scan_ok
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_compare(config: StudyConfig) -> tuple[StudyReport, int]:
    """Mixed (div-div) versus primal eigenvalues on the same mesh."""
    config.validate()
    if config.degree not in (2, 3):
        raise ConfigError("compare requires degree 2 or 3")
    if len(config.levels) != 1:
        raise ConfigError("compare expects exactly one level")
    n = config.levels[0]
    tmesh = build_mesh(config, n)
    t0 = time.perf_counter()
    mixed = solve_fem2(tmesh, config.degree, config.n_eigs, config.backend,
                       sigma=config.sigma, tol_zero=config.tol_zero,
                       seed=config.seed)
    primal = solve_primal(tmesh, config.degree, config.n_eigs)
    runtime = time.perf_counter() - t0
    h = mesh_stats(tmesh).h
    m = min(len(mixed.eigenvalues), len(primal.eigenvalues))
    gaps = np.abs(mixed.eigenvalues[:m] - primal.eigenvalues[:m])
    print(f"level n={n}  h={h:.6g}  ({runtime:.2f}s)")
    print(f"{'i':>3} {'lambda_mixed':>22} {'lambda_primal':>22} {'gap':>14}")
    for i in range(m):
        print(f"{i + 1:>3} {mixed.eigenvalues[i]:>22.16g} "
              f"{primal.eigenvalues[i]:>22.16g} {gaps[i]:>14.6e}")
    row = LevelResult(
        level=n, h=h, lambdas=mixed.eigenvalues[:m],
        exact=primal.eigenvalues[:m], errors=gaps, rates=None, runtime=runtime,
    )
    return StudyReport(config, [row]), EXIT_OK


def cmd_mesh(config: StudyConfig) -> int:
    """Build a mesh and write the plain-text criss-cross format."""
    config.validate()
    tmesh = build_mesh(config, config.levels[0])
    path = config.out or "mesh.txt"
    write_mesh_text(tmesh, path)
    stats = mesh_stats(tmesh)
    print(f"wrote {path}: V={stats.n_vertices} E={stats.n_edges} "
          f"T={stats.n_triangles} Q={stats.n_quads} h={stats.h:.6g}")
    return EXIT_OK


def _parse_levels(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise ConfigError(f"bad levels {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crisscross",
        description="Laplace eigenvalues with Lagrange elements on "
                    "criss-cross meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("eig", "eigenvalue table on one mesh"),
        ("converge", "refinement study with rates"),
        ("audit", "complex exactness audit and spurious scan"),
        ("compare", "mixed versus primal eigenvalues"),
        ("mesh", "write a mesh in the plain-text format"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--domain", default="square", choices=DOMAINS)
        p.add_argument("--degree", type=int, default=2)
        p.add_argument("--form", default="fem2", choices=FORMS)
        p.add_argument("--levels", default="8",
                       help="comma-separated subdivision counts")
        p.add_argument("--neigs", type=int, default=10)
        p.add_argument("--backend", default="dense",
                       choices=("dense", "lanczos"))
        p.add_argument("--sigma", type=float, default=1.0)
        p.add_argument("--tol-zero", type=float, default=1e-9)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--perturb", type=float, default=0.15)
        p.add_argument("--exact", default=None,
                       help="comma-separated exact targets")
        p.add_argument("--expect-rate", default=None,
                       help="lo:hi window for the first-mode rate")
        p.add_argument("--out", default=None, help="CSV output path")
        p.add_argument("--export-mesh", default=None)
        p.add_argument("--export-matrices", default=None,
                       help="path stem for MatrixMarket files")
    return parser


def _config_from_args(args) -> StudyConfig:
    exact = None
    if args.exact:
        try:
            exact = [float(tok) for tok in args.exact.split(",") if tok]
        except ValueError:
            raise ConfigError(f"bad exact targets {args.exact!r}") from None
    expect_rate = None
    if args.expect_rate:
        try:
            lo, hi = (float(t) for t in args.expect_rate.split(":"))
        except ValueError:
            raise ConfigError(f"bad rate window {args.expect_rate!r}") from None
        expect_rate = (lo, hi)
    return StudyConfig(
        domain=args.domain,
        degree=args.degree,
        formulation=args.form,
        levels=_parse_levels(args.levels),
        n_eigs=args.neigs,
        backend=args.backend,
        sigma=args.sigma,
        tol_zero=args.tol_zero,
        seed=args.seed,
        perturb=args.perturb,
        exact=exact,
        expect_rate=expect_rate,
        out=args.out,
        export_mesh=args.export_mesh,
        export_matrices=args.export_matrices,
    )


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "eig":
            report, code = cmd_eig(config)
        elif args.command == "converge":
            report, code = cmd_converge(config)
        elif args.command == "audit":
            return cmd_audit(config)
        elif args.command == "compare":
            report, code = cmd_compare(config)
        else:
            return cmd_mesh(config)
        if config.out:
            report.write(config.out)
        return code
    except ValueError as exc:
        # ConfigError, MeshError, and argument errors from the modules
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
