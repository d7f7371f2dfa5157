"""Command line driver: ``porowg run``, ``porowg oracle`` and ``porowg mesh``.

Exit codes: 0 success, 1 solver failure, 2 configuration error, 3 oracle
check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import elasticity, oracle, poro2, poro3, problems
from .linalg import ConvergenceError
from .mesh import Mesh, build_structured_mesh, dump_mesh, mesh_stats
from .wgfem import PhysicalParams, assemble, assemble_elasticity

PROBLEMS = ("elasticity2d", "elasticity3d", "poro2_2d", "poro2_3d", "poro3_2d", "poro3_3d")
COLUMNS = ("problem", "dim", "mesh_n", "N", "N_f", "lambda", "dt", "solver", "precond", "regularized", "rho",
           "outer_iters", "inner_iters_total", "final_relres", "wall_time_s")
EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_ORACLE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "elasticity2d"
    mesh_n: list[int] = field(default_factory=lambda: [16])
    lam: list[float] = field(default_factory=lambda: [1.0])
    dt: list[float] = field(default_factory=lambda: [1e-3])
    solver: str = "minres"
    precond: str | None = None
    regularize: str = "on"
    tol: float | None = None
    maxit: int = 1000
    restart: int = 30
    rho_mode: str = "auto"
    mu: float | None = None
    steps: int = 1
    seed: int = 0
    workers: int = 1
    output: str | None = None
    format: str = "csv"

    @property
    def dim(self) -> int:
        return 3 if self.problem.endswith("3d") else 2

    @property
    def is_poro(self) -> bool:
        return self.problem.startswith("poro")

    def resolved_precond(self) -> str:
        return self.precond or {"minres": "diag", "gmres": "tri"}[self.solver]

    def resolved_tol(self) -> float:
        if self.tol is not None:
            return self.tol
        if self.is_poro:
            return poro2.DEFAULT_TOL
        return elasticity.DEFAULT_TOL[self.dim]

    def resolved_mu(self) -> float:
        if self.mu is not None:
            return self.mu
        return 1.0 if self.is_poro else 0.5

    def fixed_rho(self) -> float | None:
        mode = self.rho_mode.strip()
        if mode == "auto":
            return None
        if mode.startswith("fixed(") and mode.endswith(")"):
            mode = mode[6:-1]
        return float(mode)

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}; got {self.problem!r}")
        for name in ("mesh_n", "lam", "dt"):
            if not getattr(self, name):
                raise ConfigError(f"sweep list {_key(name)!r} is empty")
        if any(n < 1 for n in self.mesh_n):
            raise ConfigError("mesh_n entries must be >= 1")
        if self.solver not in ("minres", "gmres"):
            raise ConfigError(f"solver must be minres or gmres; got {self.solver!r}")
        if self.precond not in (None, "diag", "tri"):
            raise ConfigError(f"precond must be diag or tri; got {self.precond!r}")
        if self.solver == "minres" and self.resolved_precond() != "diag":
            raise ConfigError("minres needs the symmetric positive definite diag preconditioner")
        if self.regularize not in ("on", "off"):
            raise ConfigError(f"regularize must be on or off; got {self.regularize!r}")
        if self.regularize == "off" and not self.problem.startswith("poro3"):
            raise ConfigError("regularize=off is only available for the three-field problems")
        if self.tol is not None and not 0 < self.tol < 1:
            raise ConfigError(f"tol must lie in (0, 1); got {self.tol}")
        if self.maxit < 1 or self.restart < 1 or self.steps < 1 or self.workers < 1:
            raise ConfigError("maxit, restart, steps and workers must be >= 1")
        if self.format not in ("csv", "markdown"):
            raise ConfigError(f"format must be csv or markdown; got {self.format!r}")
        try:
            rho = self.fixed_rho()
        except ValueError:
            raise ConfigError(f"rho_mode must be 'auto', a number or 'fixed(<value>)'; got {self.rho_mode!r}")
        if rho is not None and not (math.isfinite(rho) and rho > 0):
            raise ConfigError("a fixed rho must be positive")
        try:
            PhysicalParams(mu=self.resolved_mu(), lam=min(self.lam), dt=min(self.dt))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


# config keys use the names from the table header; "lambda" is reserved in Python
_ALIASES = {"lambda": "lam", "out": "output"}
_LISTS = {"mesh_n": int, "lam": float, "dt": float}


def _key(name: str) -> str:
    return {"lam": "lambda"}.get(name, name)


def _coerce(name: str, value):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    if name in _LISTS:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        try:
            return [_LISTS[name](v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{_key(name)}: cannot parse {value!r}")
    if value is None:
        return None
    kind = kinds[name]
    try:
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{_key(name)}: cannot parse {value!r}")
    if name == "rho_mode" and not isinstance(value, str):
        return str(float(value))
    if name == "regularize" and isinstance(value, bool):
        return "on" if value else "off"
    return str(value)


def config_from_mapping(data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    updates = {}
    for raw, value in data.items():
        name = _ALIASES.get(raw, raw)
        if name not in known:
            raise ConfigError(f"unknown config key {raw!r}")
        updates[name] = _coerce(name, value)
    return replace(cfg, **updates)


def load_configs(path: str | Path, overrides: dict | None = None) -> list[ExperimentConfig]:
    """Read a TOML config.  Top-level keys are shared defaults; each
    ``[[run]]`` table is one experiment (a file without runs is one)."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    runs = data.pop("run", None) or [{}]
    base = config_from_mapping(data)
    out = []
    for run in runs:
        cfg = config_from_mapping(run, base)
        if overrides:
            cfg = config_from_mapping(overrides, cfg)
        out.append(cfg.validate())
    return out


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("porowg.presets").iterdir() if p.name.endswith(".toml"))


def preset_path(name: str):
    res = resources.files("porowg.presets") / f"{name}.toml"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res


# ---------------------------------------------------------------------------
# experiments


@dataclass
class CellResult:
    row: dict
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _cell(cfg: ExperimentConfig, n: int, lam: float, dt: float | None) -> CellResult:
    dim = cfg.dim
    mesh = build_structured_mesh(dim, n)
    mu = cfg.resolved_mu()
    params = PhysicalParams(mu=mu, lam=lam, dt=dt if dt is not None else 1.0)
    kind = cfg.resolved_precond()
    tol = cfg.resolved_tol()
    fixed = cfg.fixed_rho()
    row = {
        "problem": cfg.problem, "dim": dim, "mesh_n": n, "N": mesh.n_elements, "N_f": mesh.n_facets,
        "lambda": lam, "dt": dt, "solver": cfg.solver, "precond": kind,
        "regularized": int(cfg.regularize == "on"), "rho": 0.0,
        "outer_iters": -1, "inner_iters_total": -1, "final_relres": math.nan, "wall_time_s": 0.0,
    }
    t0 = time.perf_counter()
    try:
        rep = _solve(cfg, mesh, params, kind, tol, fixed, row)
    except (ConvergenceError, ArithmeticError) as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            row.update(outer_iters=rep.iterations, inner_iters_total=rep.inner_iterations_total,
                       final_relres=rep.final_relres)
        row["wall_time_s"] = round(time.perf_counter() - t0, 4)
        return CellResult(row, f"{type(exc).__name__}: {exc}")
    row.update(outer_iters=rep.iterations, inner_iters_total=rep.inner_iterations_total,
               final_relres=float(rep.final_relres), wall_time_s=round(time.perf_counter() - t0, 4))
    return CellResult(row, None if rep.converged else f"{cfg.solver} did not converge ({rep.flag})")


def _solve(cfg, mesh: Mesh, params: PhysicalParams, kind: str, tol: float, fixed: float | None, row: dict):
    dim = mesh.dim
    if not cfg.is_poro:
        prob = problems.elasticity_problem(params, dim)
        rho = fixed if fixed is not None else 1.0
        row["rho"] = rho
        _, rep = elasticity.solve_elasticity(mesh, params, prob.f, cfg.solver, rho=rho, tol=tol, maxit=cfg.maxit,
                                             boundary=prob.boundary, restart=cfg.restart,
                                             blocks=assemble_elasticity(mesh, params), precond=kind)
        return rep
    prob = problems.poro_problem(params, dim)
    blocks = assemble(mesh, params)
    state = poro2.PoroState.zeros(mesh)
    reports = []
    if cfg.problem.startswith("poro2"):
        rho = fixed if fixed is not None else 1.0
        row["rho"] = rho
        op = poro2.two_field_operator(blocks, params)
        cache: dict = {}
        for _ in range(cfg.steps):
            t = state.t + params.dt
            system = poro2.assemble_two_field(mesh, params, state, prob.f(t), prob.s(t), blocks, t, op)
            system.cache = cache
            state, rep = poro2.solve_two_field_step(system, cfg.solver, tol, cfg.maxit, cfg.restart, kind,
                                                    elasticity_inner={"rho": rho})
            reports.append(rep)
            if not rep.converged:
                break
    else:
        for _ in range(cfg.steps):
            t = state.t + params.dt
            system = poro3.build_three_field(blocks, params, state, cfg.regularize, prob.f(t), prob.s(t),
                                             rho=fixed, t=t)
            row["rho"] = system.rho
            state, rep = poro3.solve_three_field_step(system, cfg.solver, tol, cfg.maxit, cfg.restart, kind)
            reports.append(rep)
            if not rep.converged:
                break
    last = reports[-1]
    if len(reports) > 1:
        # one row per cell: worst outer count, summed inner work
        last.iterations = max(r.iterations for r in reports)
        last.inner_iterations_total = sum(r.inner_iterations_total for r in reports)
    return last


def _cells(cfg: ExperimentConfig):
    dts = cfg.dt if cfg.is_poro else [None]
    return [(n, lam, dt) for dt in dts for lam in cfg.lam for n in cfg.mesh_n]


def run_experiment(cfg: ExperimentConfig) -> list[CellResult]:
    """One result per (mesh, lambda, dt) cell; failed cells are kept with their error."""
    cfg.validate()
    cells = _cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_cell, cfg, *c) for c in cells]
            return [f.result() for f in futures]
    return [_cell(cfg, *c) for c in cells]


# ---------------------------------------------------------------------------
# tables


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rows(results) -> list[dict]:
    return [r.row if isinstance(r, CellResult) else r for r in results]


def table_csv(results) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(COLUMNS)
    for row in _rows(results):
        out.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def table_markdown(results) -> str:
    """Rows are solver x regularized x dt x lambda, columns are the element counts N."""
    rows = _rows(results)
    Ns = sorted({r["N"] for r in rows})
    with_dt = any(r["dt"] is not None for r in rows)
    with_reg = len({r["regularized"] for r in rows}) > 1
    keys = []
    for r in rows:
        k = (r["solver"], r["regularized"], r["dt"], r["lambda"])
        if k not in keys:
            keys.append(k)
    head = ["solver"] + (["regularized"] if with_reg else []) + (["dt"] if with_dt else []) + ["lambda"]
    lines = ["| " + " | ".join(head + [f"N={n}" for n in Ns]) + " |",
             "|" + "---|" * (len(head) + len(Ns))]
    for k in keys:
        solver, reg, dt, lam = k
        cells = {r["N"]: r for r in rows if (r["solver"], r["regularized"], r["dt"], r["lambda"]) == k}
        label = [solver.upper()] + (["yes" if reg else "no"] if with_reg else []) \
            + ([f"{dt:g}"] if with_dt else []) + [f"{lam:g}"]
        vals = []
        for n in Ns:
            r = cells.get(n)
            vals.append("" if r is None else (str(r["outer_iters"]) if r["outer_iters"] >= 0 else "fail"))
        lines.append("| " + " | ".join(label + vals) + " |")
    return "\n".join(lines) + "\n"


def emit_table(results, format: str = "csv", path: str | Path | None = None) -> str:
    """Render the results as CSV or markdown; write to ``path`` when given."""
    if not results:
        raise ValueError("no results to emit")
    if format == "csv":
        text = table_csv(results)
    elif format == "markdown":
        text = table_markdown(results)
    else:
        raise ValueError(f"unknown format {format!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_cell(name: str, text: str):
    if name in ("dim", "mesh_n", "N", "N_f", "regularized", "outer_iters", "inner_iters_total"):
        return int(text)
    if name == "dt":
        return float(text) if text else None
    if name in ("lambda", "rho", "final_relres", "wall_time_s"):
        return float(text)
    return text


def read_table_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError("unexpected CSV header")
        return [{k: _parse_cell(k, v) for k, v in row.items()} for row in reader]


# ---------------------------------------------------------------------------
# oracle suite


DEFAULT_ORACLE_N = {2: [2, 4], 3: [1, 2]}


def run_oracle_suite(dims=(2,), ns: list[int] | None = None, lams=(1.0, 1e2, 1e4), max_n: int | None = None,
                     cases=oracle.CASES, path: str | Path | None = None) -> list[oracle.SpectrumReport]:
    """Run every bound check on the requested meshes.

    Sizes are checked against the dense caps before any work is done.
    """
    plan = []
    for dim in dims:
        if ns is not None:
            sizes = list(ns)
        elif max_n is not None:
            sizes = [n for n in ([2, 4, 8, 16] if dim == 2 else [1, 2, 3, 4]) if n <= max_n] or [max_n]
        else:
            sizes = DEFAULT_ORACLE_N[dim]
        for n in sizes:
            if n > oracle.MESH_CAPS[dim]:
                raise oracle.DimensionCapError(
                    f"dense checks are capped at n <= {oracle.MESH_CAPS[dim]} in {dim}D (got n = {n})")
            plan.append((dim, n))
    reports = []
    for dim, n in plan:
        mesh = build_structured_mesh(dim, n)
        for lam in lams:
            params = PhysicalParams(mu=1.0, lam=lam)
            blocks = assemble(mesh, params)
            for case in cases:
                reports.extend(oracle.verify_bounds(case, mesh, params, blocks=blocks))
    if path is not None:
        oracle.write_oracle_csv(reports, path)
    return reports


# ---------------------------------------------------------------------------
# argument handling


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(ExperimentConfig):
        flag = "--" + _key(f.name).replace("_", "-")
        dests = [flag] + (["--" + f.name.replace("_", "-")] if _key(f.name) != f.name else [])
        if f.name == "output":
            dests.append("--out")
        p.add_argument(*dests, dest=f.name, default=None,
                       help=f"override the config value of {_key(f.name)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="porowg", description="Weak Galerkin elasticity/poroelasticity solvers")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--config", help="TOML config file")
    run.add_argument("--preset", help="shipped preset name (see --list-presets)")
    run.add_argument("--list-presets", action="store_true")
    _add_config_flags(run)

    orc = sub.add_parser("oracle", help="dense eigenvalue-bound checks")
    orc.add_argument("--dim", type=int, nargs="+", default=[2])
    orc.add_argument("--n", type=int, nargs="+", default=None)
    orc.add_argument("--max-n", type=int, default=None)
    orc.add_argument("--lambda", dest="lams", type=float, nargs="+", default=[1.0, 1e2, 1e4])
    orc.add_argument("--case", dest="cases", nargs="+", choices=oracle.CASES, default=list(oracle.CASES))
    orc.add_argument("--out", default=None)

    msh = sub.add_parser("mesh", help="build a structured mesh and print its statistics")
    msh.add_argument("--dim", type=int, required=True)
    msh.add_argument("--n", type=int, required=True)
    msh.add_argument("--dump", default=None, help="write the plain-text mesh file")
    return parser


def _cmd_run(args) -> int:
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
                 if getattr(args, f.name) is not None}
    try:
        if args.config and args.preset:
            raise ConfigError("use either --config or --preset")
        if args.preset:
            with resources.as_file(preset_path(args.preset)) as p:
                configs = load_configs(p, overrides)
        elif args.config:
            configs = load_configs(args.config, overrides)
        else:
            configs = [config_from_mapping(overrides).validate()]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = []
    for cfg in configs:
        for res in run_experiment(cfg):
            results.append(res)
            if not res.ok:
                r = res.row
                print(f"cell failed: {r['problem']} n={r['mesh_n']} lambda={r['lambda']:g} dt={r['dt']}: "
                      f"{res.error}", file=sys.stderr)
    out, fmt = configs[-1].output, configs[-1].format
    try:
        text = emit_table(results, fmt, out)
    except OSError as exc:
        print(f"cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if out is None:
        sys.stdout.write(text)
    return EXIT_OK if all(r.ok for r in results) else EXIT_SOLVER


def _cmd_oracle(args) -> int:
    try:
        reports = run_oracle_suite(args.dim, args.n, args.lams, args.max_n, args.cases, args.out)
    except (oracle.DimensionCapError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.lemma:<26} n={r.mesh_n} lambda={r.lam:g} eig=[{r.min:.6g}, {r.max:.6g}] "
              f"bound=[{r.lower:.6g}, {r.upper:.6g}]")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_ORACLE if failed else EXIT_OK


def _cmd_mesh(args) -> int:
    try:
        mesh = build_structured_mesh(args.dim, args.n)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for k, v in mesh_stats(mesh).items():
        print(f"{k} = {v}")
    if args.dump:
        try:
            dump_mesh(mesh, args.dump)
        except OSError as exc:
            print(f"cannot write {args.dump}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "oracle": _cmd_oracle, "mesh": _cmd_mesh}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
