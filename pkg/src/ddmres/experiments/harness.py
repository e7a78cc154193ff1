"""Experiment specifications, convergence tables and the study runners."""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from ..errors import DDMResError, DegenerateFit, SolverError, ValidationError
from ..mesh import uniform_mesh_1d
from ..optimal_test import build_p1conf_basis, optimal_basis_1d, split_grid, traced_solution
from ..problem import TestNormKind
from ..solver import SolverConfig, best_lp_approximation, error_norm, solve_mixed, solve_petrov_galerkin
from ..spaces import P0Space, P1Cont1D, PkCont1D, RefinedP1
from . import cases

EXPERIMENTS = ("gibbs_ideal", "gibbs_ddmres", "jump_rates_1d", "singular_refined",
               "level_convergence", "advect2d_smooth", "advect2d_jump")

# the L^1 error of the (p-independent) cell-average approximant is reported
# for p = 1; no solve ever runs at p = 1
P_ONE_ALLOWED = ("jump_rates_1d", "advect2d_smooth", "advect2d_jump")

DEFAULTS = {
    "gibbs_ideal": dict(p=(2.0, 1.5, 1.25, 1.125), n=(9,)),
    "gibbs_ddmres": dict(p=(1.01,), n=(9,), k=(2, 3, 5)),
    "jump_rates_1d": dict(p=(1.0, 1.5, 2.0), n=tuple(2**i for i in range(1, 14))),
    "singular_refined": dict(p=(2.0,), n=tuple(2**i for i in range(1, 9)), ell=(1, 2, 4)),
    "level_convergence": dict(p=(2.0,), n=(16,), ell=(1, 2, 3, 4, 5, 6), ell_ref=9),
    "advect2d_smooth": dict(p=(1.0, 1.5, 2.0, 3.0), levels=4),
    "advect2d_jump": dict(p=(1.0, 1.5, 2.0, 3.0), levels=4),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One study with its parameter overrides; unset fields take the study defaults."""

    name: str
    p: tuple = ()
    n: tuple = ()
    k: tuple = ()
    ell: tuple = ()
    ell_ref: Optional[int] = None
    levels: Optional[int] = None
    seed: int = 0
    newton_tol: Optional[float] = None
    max_iters: Optional[int] = None
    fit_range: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        for key, value in DEFAULTS[self.name].items():
            cur = getattr(self, key)
            if cur in ((), None):
                object.__setattr__(self, key, value)
        for key in ("p", "n", "k", "ell"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        lo = 1.0 if self.name in P_ONE_ALLOWED else 1.01
        for p in self.p:
            if not lo <= p <= 4.0:
                raise ValidationError(f"p = {p} is outside [{lo}, 4] for {self.name}")
        if any(int(n) < 1 for n in self.n):
            raise ValidationError("mesh sizes must be positive")
        if self.name == "gibbs_ddmres" and any(k < 2 for k in self.k):
            raise ValidationError("gibbs_ddmres needs test degree k >= 2")
        if any(l < 0 for l in self.ell):
            raise ValidationError("refinement levels must be non-negative")
        if self.levels is not None and self.levels < 2 and self.name.startswith("advect2d"):
            raise ValidationError("2-D studies need at least two levels")
        if self.name == "level_convergence" and max(self.ell) >= self.ell_ref:
            raise ValidationError("the reference level must exceed every measured level")

    @classmethod
    def from_mapping(cls, data):
        """Build a spec from a (TOML-style) mapping; unknown keys are rejected."""
        names = {f.name for f in fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValidationError(f"unknown experiment settings: {', '.join(sorted(extra))}")
        kw = dict(data)
        for key in ("p", "n", "k", "ell", "fit_range"):
            if key in kw and not isinstance(kw[key], (list, tuple)):
                kw[key] = (kw[key],)
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def solver_config(self, **extra):
        kw = {}
        if self.newton_tol is not None:
            kw["newton_tol"] = self.newton_tol
        if self.max_iters is not None:
            kw["max_iters"] = self.max_iters
        kw.update(extra)
        return SolverConfig(**kw)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    residual: float
    first: int
    last: int


def fit_rate(rows, range=None):
    """Least-squares slope of log(error) against log(h).

    ``rows`` are ``(h, error, ...)`` tuples; ``range`` is an optional
    ``(first, last)`` pair of row indices, both included.
    """
    rows = list(rows)
    first, last = (0, len(rows) - 1) if range is None else range
    sel = rows[first:last + 1]
    if len(sel) < 3:
        raise DegenerateFit(f"need at least 3 rows to fit a rate, got {len(sel)}")
    h = np.array([r[0] for r in sel], dtype=float)
    e = np.array([r[1] for r in sel], dtype=float)
    if np.any(h <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise DegenerateFit("errors and mesh sizes must be positive and finite")
    x, y = np.log(h), np.log(e)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ np.array([slope, icpt])
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(icpt), r2, math.sqrt(ss_res / len(sel)), first, last)


@dataclass
class ConvergenceTable:
    experiment: str
    p: float
    rows: list  # (h, error, rate); rate is nan on the first row
    label: str = ""
    fit: Optional[FitResult] = None
    notes: list = field(default_factory=list)

    @classmethod
    def from_errors(cls, experiment, p, hs, errors, label="", fit_range=None):
        order = np.argsort(-np.asarray(hs, dtype=float), kind="stable")
        hs = [float(hs[i]) for i in order]
        errors = [float(errors[i]) for i in order]
        rows = []
        for i, (h, e) in enumerate(zip(hs, errors)):
            if i == 0 or e <= 0 or errors[i - 1] <= 0:
                rate = float("nan")
            else:
                rate = math.log(errors[i - 1] / e) / math.log(hs[i - 1] / h)
            rows.append((h, e, rate))
        table = cls(experiment, float(p), rows, label)
        if len(rows) >= 3:
            try:
                table.fit = fit_rate(rows, fit_range)
            except DegenerateFit as exc:
                table.notes.append(f"no fit: {exc}")
        if table.fit is not None and len(rows) >= 4:
            rates = np.array([r[2] for r in rows[1:]])
            spread = float(np.nanmax(rates) - np.nanmin(rates))
            if spread > 0.1:
                table.notes.append(f"local rates oscillate by {spread:.3f}")
        return table

    @property
    def slope(self):
        return None if self.fit is None else self.fit.slope


@dataclass
class SampleTable:
    """Non-convergence output: named columns and rows (Gibbs studies)."""

    experiment: str
    columns: tuple
    rows: list
    label: str = ""
    p: float = float("nan")
    notes: list = field(default_factory=list)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


# parallel cells ---------------------------------------------------------------

def thread_count():
    raw = os.environ.get("DDMRES_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"DDMRES_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def _map_cells(func, cells):
    """Run independent cells, in parallel when DDMRES_THREADS > 1; keeps input order."""
    cells = list(cells)
    workers = min(thread_count(), len(cells))
    if workers <= 1:
        return [func(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, cells))


def _context(spec, exc, where):
    msg = f"{spec.name} ({where}): {exc}"
    exc.args = (msg,) + exc.args[1:]
    return exc


# runners ----------------------------------------------------------------------

def _overshoot(space, coeffs, samples=2001):
    x = np.linspace(space.mesh.a, space.mesh.b, samples)
    x = np.union1d(x, space.node_coords())
    return float((space.eval(x) @ coeffs).max() - 1.0)


def _run_gibbs_ideal(spec):
    n = spec.n[0]
    space = P1Cont1D(uniform_mesh_1d(-1.0, 1.0, n))

    def cell(p):
        c, info = best_lp_approximation(np.sign, space, p, discontinuities=[0.0], return_info=True)
        return p, _overshoot(space, c), info["iterations"], c

    out = _map_cells(cell, spec.p)
    rows = [(p, ov, it) for p, ov, it, _ in out]
    table = SampleTable("gibbs_ideal", ("p", "overshoot", "iterations"), rows, f"n={n}")
    nodes = space.node_coords()
    profile = SampleTable("gibbs_ideal", ("x",) + tuple(f"u_p{p:g}" for p in spec.p),
                          [tuple([x] + [c[i] for *_, c in out]) for i, x in enumerate(nodes)],
                          "nodal values")
    return [table, profile]


def _run_gibbs_ddmres(spec):
    n = spec.n[0]
    mesh = uniform_mesh_1d(-1.0, 1.0, n)
    trial = P1Cont1D(mesh)
    config = spec.solver_config(norm=TestNormKind.DERIVATIVE_ONLY)
    out = []
    for p in spec.p:
        ideal = _overshoot(trial, best_lp_approximation(np.sign, trial, p, discontinuities=[0.0]))
        problem = cases.gibbs_problem(p)

        def cell(k, problem=problem, p=p):
            test = PkCont1D(mesh, k, vanish_at=(1.0,))
            try:
                sol = solve_mixed(problem, trial, test, config)
            except SolverError as exc:
                raise _context(spec, exc, f"p={p:g}, k={k}")
            d = sol.diagnostics
            return (k, _overshoot(trial, sol.u_coeffs), ideal, d["iterations"],
                    d["final_residual_norm"], sol.orthogonality_residual())

        rows = _map_cells(cell, spec.k)
        out.append(SampleTable("gibbs_ddmres",
                               ("k", "overshoot", "ideal_overshoot", "iterations", "residual",
                                "orthogonality"), rows, f"p={p:g}, n={n}", p))
    return out


def _run_jump_rates(spec):
    def cell(n):
        mesh = uniform_mesh_1d(0.0, 1.0, n)
        trial = P0Space(mesh)
        u = solve_petrov_galerkin(cases.jump_problem(), trial, optimal_basis_1d(mesh, 1.0))
        return [error_norm(cases.sign_jump, u, trial, p, special_points=[cases.JUMP_AT])
                for p in spec.p]

    errs = np.array(_map_cells(cell, spec.n))
    hs = [1.0 / n for n in spec.n]
    tables = []
    for i, p in enumerate(spec.p):
        t = ConvergenceTable.from_errors("jump_rates_1d", p, hs, errs[:, i], f"p={p:g}", spec.fit_range)
        if p == 1.0:
            t.notes.append("p = 1: L^1 error of the cell-average approximant (no p = 1 solve)")
        tables.append(t)
    return tables


def _run_singular(spec):
    tables = []
    for p in spec.p:
        problem = cases.singular_problem(p)
        config = spec.solver_config()
        for ell in spec.ell:
            def cell(n, ell=ell, problem=problem, p=p):
                mesh = uniform_mesh_1d(0.0, 1.0, n)
                trial = P0Space(mesh)
                try:
                    sol = solve_mixed(problem, trial, RefinedP1(mesh, ell), config)
                except SolverError as exc:
                    raise _context(spec, exc, f"p={p:g}, l={ell}, n={n}")
                e = error_norm(cases.singular_exact, sol.u_coeffs, trial, p,
                               singular_points=[cases.SINGULAR_AT])
                return e, sol.orthogonality_residual()

            res = _map_cells(cell, spec.n)
            t = ConvergenceTable.from_errors("singular_refined", p, [1.0 / n for n in spec.n],
                                             [e for e, _ in res], f"p={p:g}, l={ell}", spec.fit_range)
            t.notes.append(f"max orthogonality residual {max(o for _, o in res):.3e}")
            tables.append(t)
    return tables


def _run_level_convergence(spec):
    n = spec.n[0]
    mesh = uniform_mesh_1d(0.0, 1.0, n)
    trial = P0Space(mesh)
    tables = []
    for p in spec.p:
        problem = cases.smooth_problem(p)
        config = spec.solver_config()

        def solve(ell, problem=problem):
            return solve_mixed(problem, trial, RefinedP1(mesh, ell, vanish_at=(1.0,)), config).u_coeffs

        levels = list(spec.ell) + [spec.ell_ref - 1, spec.ell_ref]
        sols = dict(zip(levels, _map_cells(solve, levels)))
        ref = sols[spec.ell_ref]

        def dist(u):
            return float(np.sum(mesh.h * np.abs(u - ref) ** p) ** (1.0 / p))

        hs = [mesh.h[0] / 2**ell for ell in spec.ell]
        t = ConvergenceTable.from_errors("level_convergence", p, hs, [dist(sols[l]) for l in spec.ell],
                                         f"p={p:g}, n={n}, reference l={spec.ell_ref}", spec.fit_range)
        t.notes.append(f"reference check: |u(l={spec.ell_ref - 1}) - u(l={spec.ell_ref})| = "
                       f"{dist(sols[spec.ell_ref - 1]):.3e}")
        tables.append(t)
    return tables


def _run_advect2d(spec, jump):
    meshes = cases.strip_meshes(spec.levels, seed=spec.seed)
    name = "advect2d_jump" if jump else "advect2d_smooth"

    def cell(mesh):
        basis = build_p1conf_basis(mesh)
        trial = P0Space(mesh)
        u = solve_petrov_galerkin(cases.advect2d_problem(mesh, jump), trial, basis)
        g = cases.inflow_jump if jump else cases.inflow_smooth
        exact = traced_solution(mesh, g)
        grid = split_grid(mesh, level=cases.JUMP_2D_AT if jump else None)
        return [error_norm(exact, u, trial, p, grid=grid) for p in spec.p]

    errs = np.array(_map_cells(cell, meshes))
    h0 = cases.mesh_size(meshes[0])
    hs = [h0 / 2**i for i in range(len(meshes))]
    tables = []
    for i, p in enumerate(spec.p):
        t = ConvergenceTable.from_errors(name, p, hs, errs[:, i], f"p={p:g}", spec.fit_range)
        t.notes.append("cell-average approximant; the error exponent is p")
        tables.append(t)
    return tables


def run_experiment(spec):
    """Run one study; returns a list of ConvergenceTable or SampleTable."""
    if not isinstance(spec, ExperimentSpec):
        raise ValidationError("run_experiment needs an ExperimentSpec")
    runners = {
        "gibbs_ideal": _run_gibbs_ideal,
        "gibbs_ddmres": _run_gibbs_ddmres,
        "jump_rates_1d": _run_jump_rates,
        "singular_refined": _run_singular,
        "level_convergence": _run_level_convergence,
        "advect2d_smooth": lambda s: _run_advect2d(s, False),
        "advect2d_jump": lambda s: _run_advect2d(s, True),
    }
    try:
        return runners[spec.name](spec)
    except DDMResError:
        raise
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"{spec.name}: {exc}") from exc


def with_overrides(spec, **kw):
    kw = {k: v for k, v in kw.items() if v not in (None, ())}
    return replace(spec, **kw) if kw else spec
