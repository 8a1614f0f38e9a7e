"""NLP model container: variables, constraints, objective, parameters.

A model is built once by a flowsheet constructor and then consumed by the
interior-point solver. Reactor equations carry the ``reactor`` tag so the
square sub-block can be carved out for the implicit and surrogate
reformulations; linking equalities that tie reactor outlets to downstream
units carry ``linking``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from . import expr as ex
from . import incidence as inc

__all__ = [
    "Variable",
    "Constraint",
    "NlpModel",
    "SquareSubsystem",
    "ModelStats",
    "NotSquare",
    "UnknownParameter",
    "extract_subsystem",
]

EQ = "eq"
INEQ = "ineq"

TAG_OPERATIONAL = "operational"
TAG_INTERNAL = "internal"
TAG_LINKING = "linking"
TAG_REACTOR = "reactor"
TAG_SURROGATE = "surrogate"

_TAGS = (TAG_OPERATIONAL, TAG_INTERNAL, TAG_LINKING, TAG_REACTOR, TAG_SURROGATE)

FULL_SPACE = "FullSpace"
SURROGATE_ALAMO = "SurrogateAlamo"
SURROGATE_NN = "SurrogateNN"
IMPLICIT = "Implicit"


class NotSquare(Exception):
    pass


class UnknownParameter(KeyError):
    pass


@dataclass
class Variable:
    name: str
    lb: float = -math.inf
    ub: float = math.inf
    init: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.lb > self.ub:
            raise ValueError(f"variable {self.name}: lb {self.lb} > ub {self.ub}")
        if not self.scale > 0:
            raise ValueError(f"variable {self.name}: scale must be positive")
        # Clip the initial value into the bounds at build time.
        self.init = min(max(self.init, self.lb), self.ub)


@dataclass
class Constraint:
    name: str
    residual: ex.Expression
    kind: str = EQ          # "eq": residual == 0, "ineq": residual <= 0
    tag: str = TAG_INTERNAL

    def __post_init__(self):
        if self.kind not in (EQ, INEQ):
            raise ValueError(f"constraint {self.name}: bad kind {self.kind!r}")
        if self.tag not in _TAGS:
            raise ValueError(f"constraint {self.name}: bad tag {self.tag!r}")


@dataclass(frozen=True)
class ModelStats:
    variables: int
    constraints: int
    equalities: int
    inequalities: int


@dataclass
class SquareSubsystem:
    """A square equality block R(x, y, u) = 0 with designated outputs y."""

    equations: List[Constraint]
    outputs: List[str]
    inputs: List[str]

    def __post_init__(self):
        if len(self.equations) != len(self.outputs):
            raise NotSquare(
                f"{len(self.equations)} equations vs {len(self.outputs)} outputs"
            )
        if set(self.outputs) & set(self.inputs):
            raise ValueError("outputs and inputs overlap")
        used = set()
        for eq in self.equations:
            used |= ex.incidence_vars(eq.residual)
        missing = [y for y in self.outputs if y not in used]
        if missing:
            raise ValueError(f"outputs never referenced by any equation: {missing}")

    def incidence_graph(self) -> inc.IncidenceGraph:
        pos = {name: k for k, name in enumerate(self.outputs)}
        rows = []
        for eq in self.equations:
            rows.append(
                sorted(pos[v] for v in ex.incidence_vars(eq.residual) if v in pos)
            )
        return inc.IncidenceGraph.from_rows(rows)


class NlpModel:
    """Ordered variables and constraints with a maximize objective.

    Parameters are named reals referenced by expressions like variables but
    bound through the parameter map at evaluation time. ``link_pairs``
    records (downstream duplicate, reactor output) variable pairs installed
    by the flowsheet builder; the implicit and surrogate reformulations key
    off it.
    """

    def __init__(self, label: str):
        self.label = label
        self.variables: Dict[str, Variable] = {}
        self.constraints: List[Constraint] = []
        self.objective: Optional[ex.Expression] = None
        self.params: Dict[str, float] = {}
        self.link_pairs: List[Tuple[str, str]] = []
        self.surrogate_boundary: dict = {}
        self.external_blocks: list = []
        self.params_version = 0

    # -- construction ------------------------------------------------

    def add_variable(self, name, lb=-math.inf, ub=math.inf, init=0.0, scale=1.0):
        if name in self.variables:
            raise ValueError(f"variable {name!r} already registered")
        if name in self.params:
            raise ValueError(f"name {name!r} already used by a parameter")
        v = Variable(name, lb, ub, init, scale)
        self.variables[name] = v
        return ex.var(name)

    def add_parameter(self, name, value):
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        if name in self.variables:
            raise ValueError(f"name {name!r} already used by a variable")
        self.params[name] = float(value)
        return ex.var(name)

    def add_constraint(self, name, residual, kind=EQ, tag=TAG_INTERNAL):
        con = Constraint(name, ex.as_expr(residual), kind, tag)
        self.constraints.append(con)
        return con

    def set_objective(self, expression):
        self.objective = ex.as_expr(expression)

    # -- parameters ----------------------------------------------------

    def fix_parameter(self, name, value):
        """Re-bind a registered parameter; model structure is unchanged."""
        if name not in self.params:
            raise UnknownParameter(name)
        self.params[name] = float(value)
        self.params_version += 1

    def eval_point(self, values: Dict[str, float]) -> Dict[str, float]:
        """Merge variable values with the current parameter bindings."""
        point = dict(self.params)
        point.update(values)
        return point

    def initial_point(self) -> Dict[str, float]:
        return {name: v.init for name, v in self.variables.items()}

    # -- checks and reporting -------------------------------------------

    def validate(self):
        """Every referenced name must be a registered variable or parameter."""
        known = set(self.variables) | set(self.params)
        exprs = [c.residual for c in self.constraints]
        if self.objective is not None:
            exprs.append(self.objective)
        for e in exprs:
            unknown = ex.incidence_vars(e) - known
            if unknown:
                raise ValueError(f"unregistered names referenced: {sorted(unknown)}")
        if self.label == FULL_SPACE:
            sub = extract_subsystem(self)
            if len(sub.equations) != len(sub.outputs):  # pragma: no cover
                raise NotSquare("reactor block is not square")
        if self.label == IMPLICIT:
            remaining = [c for c in self.constraints if c.tag == TAG_REACTOR]
            if remaining:
                raise ValueError(
                    f"{len(remaining)} reactor constraints still visible to the solver"
                )
        return self

    def statistics(self) -> ModelStats:
        """Counts of the model exactly as the solver sees it."""
        n_ext = sum(len(b.row_names) for b in self.external_blocks)
        eqs = sum(1 for c in self.constraints if c.kind == EQ) + n_ext
        ineqs = sum(1 for c in self.constraints if c.kind == INEQ)
        return ModelStats(
            variables=len(self.variables),
            constraints=len(self.constraints) + n_ext,
            equalities=eqs,
            inequalities=ineqs,
        )

    def constraints_tagged(self, tag) -> List[Constraint]:
        return [c for c in self.constraints if c.tag == tag]

    def clone(self) -> "NlpModel":
        """Independent copy for concurrent solves. Expressions are immutable
        and shared; containers and parameter bindings are copied."""
        m = NlpModel(self.label)
        m.variables = {k: replace(v) for k, v in self.variables.items()}
        m.constraints = list(self.constraints)
        m.objective = self.objective
        m.params = dict(self.params)
        m.link_pairs = list(self.link_pairs)
        m.surrogate_boundary = copy.deepcopy(self.surrogate_boundary)
        m.external_blocks = [b.rebind(m) for b in self.external_blocks]
        m.params_version = self.params_version
        return m

    def dump(self) -> str:
        """Human-readable listing for debugging; not a stable format."""
        lines = [f"NlpModel[{self.label}]"]
        lines.append(f"  parameters ({len(self.params)}):")
        for k, v in self.params.items():
            lines.append(f"    {k} = {v:g}")
        lines.append(f"  variables ({len(self.variables)}):")
        for v in self.variables.values():
            lines.append(
                f"    {v.name}: [{v.lb:g}, {v.ub:g}] init={v.init:g} scale={v.scale:g}"
            )
        lines.append(f"  constraints ({len(self.constraints)}):")
        for c in self.constraints:
            op = "==0" if c.kind == EQ else "<=0"
            lines.append(f"    [{c.tag}] {c.name} {op}")
        for b in self.external_blocks:
            lines.append(f"  external block: {len(b.row_names)} linking rows")
        return "\n".join(lines)


def extract_subsystem(model: NlpModel, tag: str = TAG_REACTOR) -> SquareSubsystem:
    """Carve the tagged square block out of a full-space model.

    Outputs are the variables used only inside the block (linking equalities
    do not count as outside use); inputs are the remaining incident
    variables. Raises NotSquare on a count mismatch and StructurallySingular
    when no perfect matching exists.
    """
    equations = [c for c in model.constraints if c.tag == tag and c.kind == EQ]
    if not equations:
        raise NotSquare(f"model has no {tag!r}-tagged equality constraints")

    incident = set()
    for eq in equations:
        incident |= ex.incidence_vars(eq.residual)
    incident &= set(model.variables)

    used_outside = set()
    for c in model.constraints:
        if c.tag in (tag, TAG_LINKING):
            continue
        used_outside |= ex.incidence_vars(c.residual)
    if model.objective is not None:
        used_outside |= ex.incidence_vars(model.objective)

    order = {name: k for k, name in enumerate(model.variables)}
    outputs = sorted(incident - used_outside, key=order.__getitem__)
    inputs = sorted(incident - set(outputs), key=order.__getitem__)

    if len(equations) != len(outputs):
        raise NotSquare(
            f"{len(equations)} {tag} equations vs {len(outputs)} internal variables"
        )
    sub = SquareSubsystem(equations=list(equations), outputs=outputs, inputs=inputs)
    inc.maximum_matching(sub.incidence_graph())  # raises StructurallySingular
    return sub
