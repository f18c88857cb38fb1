"""
Pydantic schemas for config validation and JSON reports
"""

import math
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Entry = Union[float, str]


def split_matrix_literal(text: str) -> List[List[str]]:
    """Split "[[-1, sin(t)], [0, 1]]" into rows of entry strings (commas inside calls kept)."""
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ValueError("matrix literal must look like [[a, b], [c, d]]")
    body = text[1:-1]
    rows: List[List[str]] = []
    depth = 0
    current = ""
    row: Optional[List[str]] = None
    for ch in body:
        if ch == "[" and depth == 0:
            row, current = [], ""
            depth = 1
            continue
        if ch == "]" and depth == 1:
            row.append(current.strip())
            rows.append(row)
            row, depth = None, 0
            continue
        if depth == 0:
            if ch.strip() and ch != ",":
                raise ValueError("unexpected text between matrix rows")
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 1:
            row.append(current.strip())
            current = ""
        else:
            current += ch
    if depth != 0 or not rows:
        raise ValueError("unbalanced matrix literal")
    return rows


class MatrixSchema(BaseModel):
    """Square matrix of numbers or expression strings in t."""
    rows: List[List[Entry]]

    @model_validator(mode="before")
    @classmethod
    def accept_literal(cls, value):
        if isinstance(value, str):
            return {"rows": split_matrix_literal(value)}
        if isinstance(value, list):
            return {"rows": value}
        return value

    @field_validator("rows")
    @classmethod
    def square(cls, rows):
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise ValueError(f"matrix must be square and non-empty, got {n} rows")
        return rows

    def entries(self) -> List[List[str]]:
        return [[e if isinstance(e, str) else repr(float(e)) for e in r] for r in self.rows]


class UniformGridSchema(BaseModel):
    step: float = Field(gt=0)
    window: Tuple[float, float]
    anchor: Optional[float] = Field(default=None, ge=0, le=1)


class GridSchema(BaseModel):
    knots: Optional[List[float]] = None
    uniform: Optional[UniformGridSchema] = None
    anchors: Optional[List[float]] = None
    anchor_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    theta: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def one_source(self):
        if (self.knots is None) == (self.uniform is None):
            raise ValueError("give exactly one of 'knots' or 'uniform'")
        if self.anchors is not None and self.anchor_fraction is not None:
            raise ValueError("give at most one of 'anchors' or 'anchor_fraction'")
        return self


class TermSchema(BaseModel):
    """Nonlinear term: one expression per output component plus declared bounds."""
    expr: List[str]
    r: float = Field(default=0.0, ge=0)
    mu: float = Field(default=0.0, ge=0)
    l: float = Field(default=0.0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def accept_string(cls, value):
        if isinstance(value, str):
            return {"expr": [value]}
        if isinstance(value, dict) and isinstance(value.get("expr"), str):
            return {**value, "expr": [value["expr"]]}
        return value


class DepcagSystemSchema(BaseModel):
    kind: Literal["depcag"]
    M: MatrixSchema
    M0: MatrixSchema
    h: Optional[TermSchema] = None


class BlockSystemSchema(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["block"]
    A: MatrixSchema
    A0: MatrixSchema
    B: MatrixSchema
    B0: MatrixSchema
    f: Optional[TermSchema] = None
    g: Optional[TermSchema] = None
    phi: Optional[TermSchema] = None
    psi: Optional[TermSchema] = None
    lam: float = Field(default=0.0, ge=0, alias="lambda")
    delta: float = Field(default=0.0, ge=0)
    omega: float = Field(default=0.0, ge=0)
    beta: float = Field(ge=0)
    beta0: float = Field(ge=0)


SystemSchema = Annotated[Union[DepcagSystemSchema, BlockSystemSchema], Field(discriminator="kind")]


class DichotomySchema(BaseModel):
    P: Optional[MatrixSchema] = None
    K: float = Field(default=1.0, ge=1)
    alpha: float = Field(gt=0)


class NumericsSchema(BaseModel):
    ode_step: Optional[float] = Field(default=None, gt=0)
    fp_tol: Optional[float] = Field(default=None, gt=0)
    picard_tol: Optional[float] = Field(default=None, gt=0)
    tail_tol: Optional[float] = Field(default=None, gt=0)
    crossing_tol: Optional[float] = Field(default=None, gt=0)
    max_iters: Optional[int] = Field(default=None, ge=1)
    samples: Optional[int] = Field(default=None, ge=1)
    spot_samples: Optional[int] = Field(default=None, ge=1)
    spot_radius: Optional[float] = Field(default=None, gt=0)
    stage_tol: Optional[float] = Field(default=None, gt=0)
    composed_tol: Optional[float] = Field(default=None, gt=0)
    seed: Optional[int] = None


class ConfigSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: GridSchema
    constants: Dict[str, float] = {}
    system: SystemSchema
    dichotomy: DichotomySchema
    numerics: NumericsSchema = NumericsSchema()


# Report schemas

def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class CheckEntry(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    inequality: str
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    passed: bool = Field(alias="pass")
    note: str = ""

    @field_validator("lhs", "rhs", mode="before")
    @classmethod
    def finite(cls, value):
        return finite_or_none(value)


class RunReport(BaseModel):
    command: str
    config_hash: str
    seed: int
    numerics: Dict[str, Union[float, int]]
    checks: Dict[str, CheckEntry] = {}
    constants: Dict[str, Optional[float]] = {}
    notes: List[str] = []
    results: Dict[str, Union[float, int, str, bool, None, List[float]]] = {}

    @field_validator("constants", mode="before")
    @classmethod
    def finite_constants(cls, value):
        return {k: finite_or_none(v) for k, v in (value or {}).items()}

    @property
    def all_passed(self) -> bool:
        return all(entry.passed for entry in self.checks.values())
