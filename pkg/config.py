"""
Configuration loading: environment defaults and JSON system configs
"""

import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

import expr
from models import (
    BlockSystem, ConditionViolation, ConfigError, DepcagSystem, DichotomySpec,
    LoadedConfig, MatrixField, NonlinearTerm, NumericsConfig,
    TimeGrid, zero_term,
)
from schemas import BlockSystemSchema, ConfigSchema, MatrixSchema, TermSchema

# Load environment variables
load_dotenv()

logger = logging.getLogger("depcag")

# Numerical defaults, overridable from the environment or .env
DEFAULT_ODE_STEP = float(os.getenv("DEPCAG_ODE_STEP", "0.01"))
DEFAULT_FP_TOL = float(os.getenv("DEPCAG_FP_TOL", "1e-12"))
DEFAULT_PICARD_TOL = float(os.getenv("DEPCAG_PICARD_TOL", "1e-8"))
DEFAULT_TAIL_TOL = float(os.getenv("DEPCAG_TAIL_TOL", "1e-8"))
DEFAULT_CROSSING_TOL = float(os.getenv("DEPCAG_CROSSING_TOL", "1e-10"))
DEFAULT_MAX_ITERS = int(os.getenv("DEPCAG_MAX_ITERS", "200"))
DEFAULT_SAMPLES = int(os.getenv("DEPCAG_SAMPLES", "40"))
DEFAULT_SPOT_SAMPLES = int(os.getenv("DEPCAG_SPOT_SAMPLES", "256"))
DEFAULT_STAGE_TOL = float(os.getenv("DEPCAG_STAGE_TOL", "1e-4"))
DEFAULT_COMPOSED_TOL = float(os.getenv("DEPCAG_COMPOSED_TOL", "1e-3"))
DEFAULT_THREADS = int(os.getenv("DEPCAG_THREADS", "1"))
LOG_LEVEL = os.getenv("DEPCAG_LOG_LEVEL", "WARNING")


def default_numerics() -> NumericsConfig:
    return NumericsConfig(
        ode_step=DEFAULT_ODE_STEP,
        fp_tol=DEFAULT_FP_TOL,
        picard_tol=DEFAULT_PICARD_TOL,
        tail_tol=DEFAULT_TAIL_TOL,
        crossing_tol=DEFAULT_CROSSING_TOL,
        max_iters=DEFAULT_MAX_ITERS,
        samples=DEFAULT_SAMPLES,
        spot_samples=DEFAULT_SPOT_SAMPLES,
        stage_tol=DEFAULT_STAGE_TOL,
        composed_tol=DEFAULT_COMPOSED_TOL,
        threads=DEFAULT_THREADS,
    )


def format_location(loc) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        elif part in ("rows", "depcag", "block"):
            continue
        else:
            path += f".{part}" if path else str(part)
    return path


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def matrix_field(schema: MatrixSchema, constants: Dict[str, float], where: str) -> MatrixField:
    entries = schema.entries()
    n = len(entries)
    compiled = []
    constant = np.zeros((n, n))
    is_constant = True
    for i, row in enumerate(entries):
        compiled_row = []
        for j, src in enumerate(row):
            try:
                tree = expr.parse(src, variables={"t"}, constants=constants)
            except expr.ParseError as e:
                raise ConfigError(str(e), f"{where}[{i}][{j}]") from None
            fn = expr.compile_expr(tree, constants)
            if expr.free_variables(tree) - set(constants) - set(expr.BUILTIN_CONSTANTS):
                is_constant = False
            else:
                constant[i, j] = float(fn({}))
            compiled_row.append(fn)
        compiled.append(compiled_row)

    source = tuple(tuple(row) for row in entries)
    if is_constant:
        if not np.all(np.isfinite(constant)):
            raise ConditionViolation("B1", f"- {where} has a non-finite entry")
        return MatrixField.from_matrix(constant, source=source)

    def fn(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((ts.size, n, n))
        env = {"t": ts}
        for i in range(n):
            for j in range(n):
                out[:, i, j] = compiled[i][j](env)
        return out

    return MatrixField(n, fn, None, source)


def nonlinear_term(schema: Optional[TermSchema], n_in: int, n_out: int, symbol: str,
                   constants: Dict[str, float], where: str) -> NonlinearTerm:
    """Compile a term in (t, <symbol>1.., w1..) into a vectorized NonlinearTerm."""
    if schema is None:
        return zero_term(n_in, n_out, symbol)
    if len(schema.expr) != n_out:
        raise ConfigError(f"expected {n_out} component expressions, got {len(schema.expr)}", f"{where}.expr")
    variables = {"t"} | {f"{symbol}{k + 1}" for k in range(n_in)} | {f"w{k + 1}" for k in range(n_in)}
    trees = []
    for k, src in enumerate(schema.expr):
        try:
            trees.append(expr.parse(src, variables=variables, constants=constants))
        except expr.ParseError as e:
            raise ConfigError(str(e), f"{where}.expr[{k}]") from None
    compiled = [expr.compile_expr(tree, constants) for tree in trees]
    uses_frozen = any(name.startswith("w") for tree in trees for name in expr.free_variables(tree))

    def fn(ts, zs, ws):
        ts = np.atleast_1d(ts)
        env = {"t": ts}
        for k in range(n_in):
            env[f"{symbol}{k + 1}"] = zs[:, k]
            env[f"w{k + 1}"] = ws[:, k]
        out = np.empty((ts.size, n_out))
        for k, run in enumerate(compiled):
            out[:, k] = run(env)
        return out

    return NonlinearTerm(
        fn, (n_in, n_in), n_out,
        growth_r=schema.r, offset_mu=schema.mu, lipschitz_l=schema.l,
        source=tuple(schema.expr), symbol=symbol, uses_frozen=uses_frozen,
    )


def build_grid(schema: ConfigSchema) -> TimeGrid:
    g = schema.grid
    if g.uniform is not None:
        fraction = g.anchor_fraction if g.anchor_fraction is not None else (g.uniform.anchor or 0.0)
        grid = TimeGrid.uniform(g.uniform.step, g.uniform.window, fraction, g.theta)
        if g.anchors is not None:
            grid = TimeGrid(grid.knots, g.anchors, grid.theta)
        return grid
    knots = np.array(g.knots, dtype=float)
    if g.anchors is not None:
        anchors = np.array(g.anchors, dtype=float)
    else:
        fraction = g.anchor_fraction or 0.0
        anchors = knots[:-1] + fraction * np.diff(knots) if knots.size > 1 else np.array([])
    if g.theta is not None:
        theta = g.theta
    else:
        theta = float(np.max(np.diff(knots))) if knots.size > 1 else 1.0
    return TimeGrid(knots, anchors, theta)


def build_numerics(schema: ConfigSchema) -> NumericsConfig:
    overrides = schema.numerics.model_dump(exclude_none=True)
    return default_numerics().with_overrides(**overrides)


def build_system(schema: ConfigSchema, grid: TimeGrid):
    s = schema.system
    constants = dict(schema.constants)
    if isinstance(s, BlockSystemSchema):
        A = matrix_field(s.A, constants, "system.A")
        A0 = matrix_field(s.A0, constants, "system.A0")
        B = matrix_field(s.B, constants, "system.B")
        B0 = matrix_field(s.B0, constants, "system.B0")
        n1, n2 = A.dim, B.dim
        f = nonlinear_term(s.f, n1, n1, "x", constants, "system.f")
        g = nonlinear_term(s.g, n1, n2, "x", constants, "system.g")
        phi = nonlinear_term(s.phi, n2, n1, "y", constants, "system.phi")
        psi = nonlinear_term(s.psi, n2, n2, "y", constants, "system.psi")
        return BlockSystem(
            grid, A, A0, B, B0,
            f=f.with_bounds(s.lam, 0.0, s.omega),
            g=g.with_bounds(s.lam, 0.0, s.omega),
            phi=phi.with_bounds(0.0, s.delta, s.omega),
            psi=psi.with_bounds(0.0, s.delta, s.omega),
            lam=s.lam, delta=s.delta, omega=s.omega, beta=s.beta, beta0=s.beta0,
            constants=constants,
        )
    M = matrix_field(s.M, constants, "system.M")
    M0 = matrix_field(s.M0, constants, "system.M0")
    h = nonlinear_term(s.h, M.dim, M.dim, "z", constants, "system.h") if s.h is not None else None
    return DepcagSystem(grid, M, M0, h, constants)


def build_dichotomy(schema: ConfigSchema, system) -> DichotomySpec:
    d = schema.dichotomy
    n = system.dim
    if d.P is None:
        if not isinstance(system, BlockSystem):
            raise ConfigError("projection P is required for depcag systems", "dichotomy.P")
        projection = system.default_projection()
    else:
        field = matrix_field(d.P, schema.constants, "dichotomy.P")
        if not field.is_constant:
            raise ConfigError("projection entries must be constant", "dichotomy.P")
        projection = field.constant
    if projection.shape != (n, n):
        raise ConfigError(f"projection must be {n}x{n}, got {projection.shape}", "dichotomy.P")
    return DichotomySpec(projection, d.K, d.alpha)


def parse_config(data: dict, validate: bool = True) -> LoadedConfig:
    """Validate a config dict against the schema and build the domain objects."""
    try:
        schema = ConfigSchema.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = format_location(first["loc"])
        details = "; ".join(f"{format_location(err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(details, path) from None

    grid = build_grid(schema)
    system = build_system(schema, grid)
    dichotomy = build_dichotomy(schema, system)
    numerics = build_numerics(schema)
    loaded = LoadedConfig(system, dichotomy, numerics, raw=data)
    if validate:
        # imported here: verify depends on the transition machinery
        from verify import validate_system
        validate_system(system, numerics)
    logger.debug(f"✅ Loaded {system!r} with {numerics}")
    return loaded


def load_config(path, validate: bool = True) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_config(data, validate=validate)


def _matrix_source(field: MatrixField) -> List[List[str]]:
    if field.source is not None:
        return [list(row) for row in field.source]
    if field.constant is not None:
        return [[repr(float(v)) for v in row] for row in field.constant]
    raise ConfigError("matrix field has no expression source to serialize")


def _term_source(term: NonlinearTerm, r: float, mu: float, l: float) -> dict:
    if term.source is None:
        raise ConfigError("nonlinear term has no expression source to serialize")
    return {"expr": list(term.source), "r": r, "mu": mu, "l": l}


def dump_config(loaded: LoadedConfig) -> dict:
    """Serialize back to the schema with the grid written out as explicit knots and anchors."""
    system = loaded.system
    grid = system.grid
    out = {
        "grid": {
            "knots": [float(t) for t in grid.knots],
            "anchors": [float(z) for z in grid.anchors],
            "theta": grid.theta,
        },
        "constants": dict(system.constants),
        "dichotomy": {
            "P": [[float(v) for v in row] for row in loaded.dichotomy.projection],
            "K": loaded.dichotomy.bigK,
            "alpha": loaded.dichotomy.alpha,
        },
        "numerics": {
            "ode_step": loaded.numerics.ode_step,
            "fp_tol": loaded.numerics.fp_tol,
            "picard_tol": loaded.numerics.picard_tol,
            "tail_tol": loaded.numerics.tail_tol,
            "crossing_tol": loaded.numerics.crossing_tol,
            "max_iters": loaded.numerics.max_iters,
            "samples": loaded.numerics.samples,
            "spot_samples": loaded.numerics.spot_samples,
            "spot_radius": loaded.numerics.spot_radius,
            "stage_tol": loaded.numerics.stage_tol,
            "composed_tol": loaded.numerics.composed_tol,
            "seed": loaded.numerics.seed,
        },
    }
    if isinstance(system, BlockSystem):
        block = {
            "kind": "block",
            "A": _matrix_source(system.A), "A0": _matrix_source(system.A0),
            "B": _matrix_source(system.B), "B0": _matrix_source(system.B0),
            "lambda": system.lam, "delta": system.delta, "omega": system.omega,
            "beta": system.beta, "beta0": system.beta0,
        }
        for name, term in system.terms().items():
            block[name] = _term_source(term, term.growth_r, term.offset_mu, term.lipschitz_l)
        out["system"] = block
    else:
        depcag = {"kind": "depcag", "M": _matrix_source(system.M), "M0": _matrix_source(system.M0)}
        if system.h is not None:
            depcag["h"] = _term_source(system.h, system.h.growth_r, system.h.offset_mu, system.h.lipschitz_l)
        out["system"] = depcag
    return out
