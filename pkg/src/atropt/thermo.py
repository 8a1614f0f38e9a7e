"""Ideal-gas thermodynamics and the Gibbs-minimization reactor block.

Species data (cubic heat-capacity polynomials, formation enthalpy, reference
entropy) comes from a TOML or JSON config; the shipped default is a
desk-scale set with a handful of pseudo values chosen so that trace-species
equilibrium compositions stay inside the range a double-precision Newton
solver can represent. Nothing downstream treats these numbers as ground
truth; all checks against them are property or oracle based.

The reactor block couples, per non-inert species j, the stationarity
condition

    g_j(T, P, x_j) / (R T) + sum_e lam_e * beta[j,e] = 0

with element balances, inert pass-through, a mole-fraction closure, an
enthalpy balance with free duty, and optionally a pinned key-species
conversion. Residuals are kept dimensionless so a single absolute tolerance
is meaningful across rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import expr as ex
from .model import NlpModel, SquareSubsystem, TAG_REACTOR

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "SpeciesData",
    "ThermoConfig",
    "ReactorState",
    "ConfigError",
    "load_thermo",
    "default_thermo",
    "enthalpy_expr",
    "partial_gibbs_expr",
    "partial_gibbs",
    "add_gibbs_block",
    "gibbs_residuals",
]

GAS_CONSTANT = 8.314462618
T_REF = 298.15

# Residual scale bases; chosen once so every reactor residual is O(1).
FLOW_SCALE = 1000.0      # mol/s
ENERGY_SCALE = 1.0e7     # W


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SpeciesData:
    name: str
    composition: Dict[str, float]   # element -> atoms per molecule
    cp: Sequence[float]             # cp(T) = A + B T + C T^2 + D T^3 [J/mol K]
    h_form: float                   # formation enthalpy at 298.15 K [J/mol]
    s_form: float                   # reference entropy at 298.15 K [J/mol K]
    inert: bool = False


@dataclass
class ThermoConfig:
    species: Dict[str, SpeciesData]
    elements: List[str]
    p_ref: float = 101325.0
    r_gas: float = GAS_CONSTANT
    t_ref: float = T_REF

    def __post_init__(self):
        for sp in self.species.values():
            if len(sp.cp) != 4:
                raise ConfigError(f"{sp.name}: need exactly 4 cp coefficients")
        missing = [
            e
            for e in self.elements
            if all(sp.composition.get(e, 0) == 0 for sp in self.species.values())
        ]
        if missing:
            raise ConfigError(f"elements {missing} appear in no species")
        beta = self.element_matrix()
        if beta.size and np.linalg.matrix_rank(beta) < len(self.elements):
            raise ConfigError(
                "element matrix is rank deficient over the non-inert species"
            )

    @property
    def names(self) -> List[str]:
        return list(self.species)

    @property
    def non_inert(self) -> List[str]:
        return [n for n, sp in self.species.items() if not sp.inert]

    @property
    def inerts(self) -> List[str]:
        return [n for n, sp in self.species.items() if sp.inert]

    def beta(self, species: str, element: str) -> float:
        return float(self.species[species].composition.get(element, 0))

    def element_matrix(self) -> np.ndarray:
        return np.array(
            [[self.beta(s, e) for s in self.non_inert] for e in self.elements]
        )

    def subset(self, names: Sequence[str]) -> "ThermoConfig":
        species = {n: self.species[n] for n in names}
        elements = [
            e
            for e in self.elements
            if any(sp.composition.get(e, 0) and not sp.inert for sp in species.values())
        ]
        return ThermoConfig(species, elements, self.p_ref, self.r_gas, self.t_ref)


@dataclass
class ReactorState:
    """Converged reactor outlet, reported in physical units."""

    temperature: float                  # K
    pressure: float                     # Pa
    flow: float                         # mol/s
    mole_fractions: Dict[str, float]
    multipliers: Dict[str, float]       # element -> L_e [J/mol]
    partial_gibbs: Dict[str, float]     # species -> g_j [J/mol]
    duty: Optional[float] = None        # W


def _load_raw(path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    raise ConfigError(f"unsupported config extension: {path.suffix!r}")


def load_thermo(path) -> ThermoConfig:
    raw = _load_raw(path)
    meta = raw.get("meta", {})
    species = {}
    for name, rec in raw["species"].items():
        species[name] = SpeciesData(
            name=name,
            composition={k: float(v) for k, v in rec.get("composition", {}).items()},
            cp=[float(c) for c in rec["cp"]],
            h_form=float(rec["h_form"]),
            s_form=float(rec["s_form"]),
            inert=bool(rec.get("inert", False)),
        )
    return ThermoConfig(
        species=species,
        elements=list(raw["elements"]["order"]),
        p_ref=float(meta.get("reference_pressure", 101325.0)),
        r_gas=float(meta.get("gas_constant", GAS_CONSTANT)),
        t_ref=float(meta.get("reference_temperature", T_REF)),
    )


def default_thermo() -> ThermoConfig:
    return load_thermo(Path(__file__).parent / "data" / "thermo_default.toml")


# -- expression builders --------------------------------------------------


def enthalpy_expr(sp: SpeciesData, t, t_ref=T_REF) -> ex.Expression:
    """h_j(T) = h_form + integral of cp from t_ref to T [J/mol]."""
    t = ex.as_expr(t)
    a, b, c, d = sp.cp
    return ex.expr_sum(
        [
            ex.const(sp.h_form),
            a * (t - t_ref),
            (b / 2.0) * (t * t - t_ref**2),
            (c / 3.0) * (t * t * t - t_ref**3),
            (d / 4.0) * (t * t * t * t - t_ref**4),
        ]
    )


def _entropy_integral_expr(sp: SpeciesData, t, t_ref=T_REF) -> ex.Expression:
    """integral of cp(T)/T from t_ref to T [J/mol K]."""
    t = ex.as_expr(t)
    a, b, c, d = sp.cp
    return ex.expr_sum(
        [
            a * ex.log(t / t_ref),
            b * (t - t_ref),
            (c / 2.0) * (t * t - t_ref**2),
            (d / 3.0) * (t * t * t - t_ref**3),
        ]
    )


def entropy_expr(sp: SpeciesData, t, p, x, cfg: ThermoConfig) -> ex.Expression:
    """Partial molar ideal-gas entropy with the log-composition term [J/mol K]."""
    r = cfg.r_gas
    terms = [
        _entropy_integral_expr(sp, t, cfg.t_ref),
        ex.const(sp.s_form),
        -r * ex.log(ex.as_expr(p) / cfg.p_ref),
        -r * ex.log(ex.as_expr(x)),
    ]
    return ex.expr_sum(terms)


def partial_gibbs_expr(sp: SpeciesData, t, p, x, cfg: ThermoConfig) -> ex.Expression:
    """g_j = h_j(T) - T s_j(T, P, x_j) [J/mol]."""
    t = ex.as_expr(t)
    return enthalpy_expr(sp, t, cfg.t_ref) - t * entropy_expr(sp, t, p, x, cfg)


def partial_gibbs(species: str, t: float, p: float, x: float, cfg: ThermoConfig) -> float:
    """Numeric partial molar Gibbs energy; EvalError when x <= 0."""
    if t <= 0 or p <= 0:
        raise ValueError("temperature and pressure must be positive")
    sp = cfg.species[species]
    e = partial_gibbs_expr(sp, ex.var("_T"), ex.var("_P"), ex.var("_x"), cfg)
    try:
        return ex.evaluate(e, {"_T": t, "_P": p, "_x": x})
    except ex.EvalError as err:
        raise err.add_context(f"partial_gibbs of {species}")


# -- reactor block ---------------------------------------------------------


def add_gibbs_block(
    model: NlpModel,
    cfg: ThermoConfig,
    prefix: str,
    inlet_flow,
    inlet_frac: Dict[str, object],
    inlet_temp,
    pressure,
    isothermal_temp: Optional[float] = None,
    conversion=None,
    conversion_species: str = "CH4",
    guess: Optional[dict] = None,
) -> List[str]:
    """Install a square Gibbs-reactor block on ``model``.

    ``inlet_*`` are expressions (or numbers) for the feed stream. When
    ``isothermal_temp`` is given, the outlet temperature is fixed and the
    enthalpy balance, duty, and conversion equation are omitted. Otherwise
    the block has a free outlet temperature and duty, and ``conversion``
    (an expression, typically a parameter) pins the key-species conversion.

    The equations carry the reactor tag. Returns the created variable names
    in registration order: x_j, F, [T, Q], lam_e.
    """
    r = cfg.r_gas
    names = cfg.names
    guess = guess or {}
    inlet_flow = ex.as_expr(inlet_flow)
    inlet_temp = ex.as_expr(inlet_temp)
    pressure = ex.as_expr(pressure)

    created: List[str] = []

    def new_var(stem, **kw):
        name = f"{prefix}.{stem}"
        model.add_variable(name, **kw)
        created.append(name)
        return ex.var(name)

    x = {
        j: new_var(f"x_{j}", lb=0.0, ub=1.0, init=guess.get(f"x_{j}", 1.0 / len(names)))
        for j in names
    }
    flow = new_var("F", lb=1e-6, init=guess.get("F", 1000.0))
    if isothermal_temp is None:
        temp = new_var("T", lb=200.0, ub=3000.0, init=guess.get("T", 1100.0))
        duty = new_var("Q", init=guess.get("Q", 0.0))
    else:
        temp = ex.const(float(isothermal_temp))
        duty = None
    lam = {e: new_var(f"lam_{e}", init=guess.get(f"lam_{e}", 0.0)) for e in cfg.elements}

    # Stationarity of the Gibbs energy, scaled by RT to make rows O(1).
    for j in cfg.non_inert:
        sp = cfg.species[j]
        g_scaled = (
            enthalpy_expr(sp, temp, cfg.t_ref) / (r * temp)
            - _entropy_integral_expr(sp, temp, cfg.t_ref) / r
            - sp.s_form / r
            + ex.log(pressure / cfg.p_ref)
            + ex.log(x[j])
        )
        resid = g_scaled + ex.expr_sum(
            [cfg.beta(j, e) * lam[e] for e in cfg.elements if cfg.beta(j, e)]
        )
        model.add_constraint(f"{prefix}.gibbs_{j}", resid, tag=TAG_REACTOR)

    # Element balances over the non-inert species.
    for e in cfg.elements:
        out_total = ex.expr_sum(
            [cfg.beta(j, e) * x[j] * flow for j in cfg.non_inert if cfg.beta(j, e)]
        )
        in_total = ex.expr_sum(
            [
                cfg.beta(j, e) * ex.as_expr(inlet_frac[j]) * inlet_flow
                for j in cfg.non_inert
                if cfg.beta(j, e)
            ]
        )
        model.add_constraint(
            f"{prefix}.element_{e}", (out_total - in_total) / FLOW_SCALE, tag=TAG_REACTOR
        )

    # Inerts pass through on a molar basis.
    for j in cfg.inerts:
        model.add_constraint(
            f"{prefix}.inert_{j}",
            (x[j] * flow - ex.as_expr(inlet_frac[j]) * inlet_flow) / FLOW_SCALE,
            tag=TAG_REACTOR,
        )

    model.add_constraint(
        f"{prefix}.sum_x",
        ex.expr_sum([x[j] for j in names]) - 1.0,
        tag=TAG_REACTOR,
    )

    if isothermal_temp is None:
        h_out = ex.expr_sum(
            [x[j] * enthalpy_expr(cfg.species[j], temp, cfg.t_ref) for j in names]
        )
        h_in = ex.expr_sum(
            [
                ex.as_expr(inlet_frac[j]) * enthalpy_expr(cfg.species[j], inlet_temp, cfg.t_ref)
                for j in names
            ]
        )
        model.add_constraint(
            f"{prefix}.enthalpy",
            (flow * h_out - inlet_flow * h_in - duty) / ENERGY_SCALE,
            tag=TAG_REACTOR,
        )
        if conversion is not None:
            key_in = ex.as_expr(inlet_frac[conversion_species]) * inlet_flow
            key_out = x[conversion_species] * flow
            model.add_constraint(
                f"{prefix}.conversion",
                ((1.0 - ex.as_expr(conversion)) * key_in - key_out) / 100.0,
                tag=TAG_REACTOR,
            )

    return created


def gibbs_residuals(state: ReactorState, inlet: dict, cfg: ThermoConfig) -> np.ndarray:
    """Dimensionless reactor residual vector at an arbitrary state.

    ``inlet`` needs keys ``flow``, ``temperature`` and ``fractions``. Order:
    stationarity per non-inert species, element balances, inert balances,
    mole-fraction closure, then the enthalpy balance when the state carries
    a duty. Propagates EvalError from the log terms.
    """
    model = NlpModel("FullSpace")
    created = add_gibbs_block(
        model,
        cfg,
        "rx",
        inlet_flow=float(inlet["flow"]),
        inlet_frac={j: float(inlet["fractions"][j]) for j in cfg.names},
        inlet_temp=float(inlet["temperature"]),
        pressure=state.pressure,
        isothermal_temp=None if state.duty is not None else state.temperature,
    )
    point = {f"rx.x_{j}": state.mole_fractions[j] for j in cfg.names}
    point["rx.F"] = state.flow
    if state.duty is not None:
        point["rx.T"] = state.temperature
        point["rx.Q"] = state.duty
    for e in cfg.elements:
        point[f"rx.lam_{e}"] = state.multipliers[e] / (cfg.r_gas * state.temperature)
    eqs = [c for c in model.constraints if not c.name.endswith(".conversion")]
    return np.array([ex.evaluate(c.residual, point) for c in eqs])
