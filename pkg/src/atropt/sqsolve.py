"""Damped Newton with a dogleg trust-region fallback for square blocks.

Blocks produced by the BLT decomposition are solved one at a time in
dependency order; earlier solutions are substituted into later blocks.
Mole-fraction style unknowns (finite lower bound) are kept strictly inside
their bound by a fraction-to-boundary step clip unless clipping is disabled,
in which case the raw Newton iterate may leave the domain of a logarithm and
the resulting evaluation error is reported instead of NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from . import expr as ex
from . import incidence as inc
from .model import Constraint, SquareSubsystem

__all__ = [
    "BlockSolveOptions",
    "BlockSolveReport",
    "solve_block",
    "solve_blt",
    "CONVERGED",
    "ITER_LIMIT",
    "SINGULAR",
    "EVAL_ERROR",
]

CONVERGED = "converged"
ITER_LIMIT = "iter_limit"
SINGULAR = "singular_jacobian"
EVAL_ERROR = "eval_error"


@dataclass
class BlockSolveOptions:
    tol: float = 1e-10              # residual infinity norm
    max_iter: int = 50
    tr_init: float = 1.0            # initial dogleg trust radius
    min_step: float = 1e-14
    clip: bool = True               # fraction-to-boundary clip at lower bounds
    clip_fraction: float = 0.01     # keep at least this fraction of the gap
    clip_floor: float = 1e-12       # hard floor on the gap to the bound

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class BlockSolveReport:
    status: str
    iterations: int
    residual_inf: float
    message: str = ""
    error: Optional[ex.EvalError] = None
    blocks: List["BlockSolveReport"] = field(default_factory=list)
    failed_block: Optional[str] = None


def _residuals(equations, point):
    return np.array([ex.evaluate(c.residual, point) for c in equations])


def _jacobian(equations, outputs, point):
    rows = ex.jacobian([c.residual for c in equations], point)
    J = np.zeros((len(equations), len(outputs)))
    pos = {name: j for j, name in enumerate(outputs)}
    for i, row in enumerate(rows):
        for name, val in row.items():
            j = pos.get(name)
            if j is not None:
                J[i, j] = val
    return J


def _clip_step(x, d, lower, opts: BlockSolveOptions):
    """Largest step fraction keeping clipped unknowns above their bound."""
    alpha = 1.0
    for i, lb in enumerate(lower):
        if lb is None or d[i] >= 0.0:
            continue
        gap = x[i] - lb
        if gap <= 0.0:
            alpha = 0.0
            continue
        limit = (opts.clip_fraction - 1.0) * gap / d[i]
        alpha = min(alpha, limit)
    return max(alpha, 0.0)


def _apply_floor(x, lower, opts: BlockSolveOptions):
    for i, lb in enumerate(lower):
        if lb is not None and x[i] - lb < opts.clip_floor:
            x[i] = lb + opts.clip_floor
    return x


def solve_block(
    equations: Sequence[Constraint],
    outputs: Sequence[str],
    guess: Dict[str, float],
    opts: BlockSolveOptions = BlockSolveOptions(),
    lower_bounds: Optional[Dict[str, float]] = None,
):
    """Solve a square block for ``outputs``; inputs are fixed in ``guess``.

    Returns (values, report). ``lower_bounds`` marks unknowns whose iterates
    must stay strictly above the given bound when clipping is enabled.
    """
    if len(equations) != len(outputs):
        raise ValueError("block is not square")
    point = dict(guess)
    x = np.array([point[name] for name in outputs], dtype=float)
    lower = [
        lower_bounds.get(name) if lower_bounds else None for name in outputs
    ]
    if opts.clip:
        x = _apply_floor(x, lower, opts)
    n = len(outputs)

    def put(vec):
        for name, val in zip(outputs, vec):
            point[name] = float(val)

    put(x)
    try:
        F = _residuals(equations, point)
    except ex.EvalError as err:
        err.add_context(f"initial point of block [{equations[0].name} ...]")
        return _values(outputs, x), BlockSolveReport(
            EVAL_ERROR, 0, math.inf, err.trace(), error=err
        )

    best_resid = float(np.max(np.abs(F))) if n else 0.0
    radius = opts.tr_init
    for it in range(opts.max_iter):
        resid = float(np.max(np.abs(F)))
        if resid <= opts.tol:
            return _values(outputs, x), BlockSolveReport(CONVERGED, it, resid)

        failed_eq = equations[int(np.argmax(np.abs(F)))].name
        try:
            J = _jacobian(equations, outputs, point)
        except ex.EvalError as err:
            err.add_context(f"jacobian of block at iteration {it}")
            return _values(outputs, x), BlockSolveReport(
                EVAL_ERROR, it, resid, err.trace(), error=err
            )

        # Row equilibration; improves LU conditioning without changing the step.
        rnorm = np.maximum(np.max(np.abs(J), axis=1), 1e-300)
        Js = J / rnorm[:, None]
        Fs = F / rnorm
        newton = None
        try:
            newton = np.linalg.solve(Js, -Fs)
            if not np.all(np.isfinite(newton)):
                newton = None
        except np.linalg.LinAlgError:
            newton = None

        phi = 0.5 * float(F @ F)
        grad = J.T @ F

        accepted = False
        if newton is not None:
            try:
                step_result = _try_step(
                    equations, outputs, point, x, F, newton, phi, grad, lower, opts
                )
            except ex.EvalError as err:
                return _values(outputs, x), BlockSolveReport(
                    EVAL_ERROR, it + 1, resid, err.trace(), error=err
                )
            if step_result is not None:
                x, F = step_result
                put(x)
                accepted = True

        if not accepted:
            # Dogleg trust region on 0.5*||F||^2.
            outcome = _dogleg_session(
                equations, outputs, point, x, F, J, grad, phi, radius, lower, opts
            )
            if outcome is None:
                status = SINGULAR if newton is None else ITER_LIMIT
                msg = (
                    f"no descent step found near equation {failed_eq!r}"
                    if status == ITER_LIMIT
                    else f"singular Jacobian and stalled trust region near {failed_eq!r}"
                )
                return _values(outputs, x), BlockSolveReport(status, it + 1, resid, msg)
            if isinstance(outcome, ex.EvalError):
                return _values(outputs, x), BlockSolveReport(
                    EVAL_ERROR, it + 1, resid, outcome.trace(), error=outcome
                )
            x, F, radius = outcome
            put(x)

        best_resid = min(best_resid, float(np.max(np.abs(F))))

    resid = float(np.max(np.abs(F)))
    if resid <= opts.tol:
        return _values(outputs, x), BlockSolveReport(CONVERGED, opts.max_iter, resid)
    return _values(outputs, x), BlockSolveReport(
        ITER_LIMIT,
        opts.max_iter,
        resid,
        f"residual {resid:.3e} after {opts.max_iter} iterations",
    )


def _values(outputs, x):
    return {name: float(v) for name, v in zip(outputs, x)}


def _try_step(equations, outputs, point, x, F, p, phi, grad, lower, opts):
    """Backtracking line search along p with the positivity clip.

    Returns (x_new, F_new) or None. Evaluation errors shrink the step when
    clipping is on and abort immediately (via exception) when it is off.
    """
    slope = float(grad @ p)
    alpha = 1.0
    if opts.clip:
        alpha = min(alpha, _clip_step(x, p, lower, opts))
        if alpha <= 0.0:
            return None
    trial_point = dict(point)
    for _ in range(30):
        x_new = x + alpha * p
        if opts.clip:
            x_new = _apply_floor(x_new.copy(), lower, opts)
        for name, val in zip(outputs, x_new):
            trial_point[name] = float(val)
        try:
            F_new = _residuals(equations, trial_point)
        except ex.EvalError as err:
            if not opts.clip:
                raise err.add_context("trial point left the evaluation domain")
            alpha *= 0.5
            if alpha < opts.min_step:
                return None
            continue
        phi_new = 0.5 * float(F_new @ F_new)
        if phi_new <= phi + 1e-4 * alpha * slope or phi_new < phi * (1 - 1e-4 * alpha):
            return x_new, F_new
        alpha *= 0.5
        if alpha < opts.min_step:
            return None
    return None


def _dogleg_session(
    equations, outputs, point, x, F, J, grad, phi, radius, lower, opts
):
    """Shrink the trust region until a step gives sufficient decrease.

    Returns (x_new, F_new, radius), an EvalError (clip off), or None when the
    region collapses below the minimum step.
    """
    gnorm2 = float(grad @ grad)
    if gnorm2 == 0.0:
        return None
    Jg = J @ grad
    jg2 = float(Jg @ Jg)
    if jg2 == 0.0:
        return None
    t_cauchy = gnorm2 / jg2
    try:
        # Regularized Gauss-Newton step works even when J is singular.
        gn = np.linalg.lstsq(J, -F, rcond=1e-12)[0]
    except np.linalg.LinAlgError:
        gn = -t_cauchy * grad

    trial_point = dict(point)
    while radius >= opts.min_step:
        p = _dogleg_step(gn, -t_cauchy * grad, radius)
        if opts.clip:
            alpha = _clip_step(x, p, lower, opts)
            p = alpha * p
        if float(np.max(np.abs(p))) < opts.min_step:
            radius *= 0.25
            continue
        x_new = x + p
        if opts.clip:
            x_new = _apply_floor(x_new, lower, opts)
        for name, val in zip(outputs, x_new):
            trial_point[name] = float(val)
        try:
            F_new = _residuals(equations, trial_point)
        except ex.EvalError as err:
            if not opts.clip:
                return err.add_context("dogleg trial point left the evaluation domain")
            radius *= 0.25
            continue
        phi_new = 0.5 * float(F_new @ F_new)
        if phi_new < phi * (1.0 - 1e-6):
            if phi_new < 0.1 * phi:
                radius = min(radius * 2.0, 1e6)
            return x_new, F_new, radius
        radius *= 0.25
    return None


def _dogleg_step(gn, cauchy, radius):
    gn_norm = float(np.linalg.norm(gn))
    if gn_norm <= radius:
        return gn
    c_norm = float(np.linalg.norm(cauchy))
    if c_norm >= radius:
        return cauchy * (radius / c_norm)
    d = gn - cauchy
    a = float(d @ d)
    b = 2.0 * float(cauchy @ d)
    c = float(cauchy @ cauchy) - radius * radius
    disc = max(b * b - 4 * a * c, 0.0)
    s = (-b + math.sqrt(disc)) / (2 * a)
    return cauchy + s * d


def solve_blt(
    sub: SquareSubsystem,
    inputs: Dict[str, float],
    guess: Dict[str, float],
    opts: BlockSolveOptions = BlockSolveOptions(),
    lower_bounds: Optional[Dict[str, float]] = None,
    partition: Optional[inc.BltPartition] = None,
):
    """Solve a square subsystem block by block in BLT order.

    ``inputs`` fixes the subsystem inputs, ``guess`` provides starting values
    for every output. The first failing block aborts downstream blocks and is
    named in the report.
    """
    if partition is None:
        partition = inc.block_triangularize(sub.incidence_graph())

    point = dict(inputs)
    for name in sub.outputs:
        point[name] = guess[name]

    block_reports: List[BlockSolveReport] = []
    total_iters = 0
    for eq_idx, var_idx in partition.blocks:
        eqs = [sub.equations[i] for i in eq_idx]
        outs = [sub.outputs[j] for j in var_idx]
        if len(eqs) == 1 and len(outs) == 1:
            values, rep = _solve_scalar(eqs[0], outs[0], point, opts, lower_bounds)
        else:
            values, rep = solve_block(eqs, outs, point, opts, lower_bounds)
        block_reports.append(rep)
        total_iters += rep.iterations
        point.update(values)
        if rep.status != CONVERGED:
            block_name = eqs[0].name if len(eqs) == 1 else f"{eqs[0].name}..{eqs[-1].name}"
            out_values = {name: point[name] for name in sub.outputs}
            return out_values, BlockSolveReport(
                rep.status,
                total_iters,
                rep.residual_inf,
                f"block [{block_name}] failed: {rep.message}",
                error=rep.error,
                blocks=block_reports,
                failed_block=block_name,
            )

    # Independent re-check of the full residual at the assembled solution.
    try:
        full = _residuals(sub.equations, point)
        resid = float(np.max(np.abs(full))) if len(full) else 0.0
    except ex.EvalError as err:  # pragma: no cover - blocks eval'd fine above
        resid = math.inf
        err = err.add_context("re-evaluating assembled BLT solution")
        out_values = {name: point[name] for name in sub.outputs}
        return out_values, BlockSolveReport(
            EVAL_ERROR, total_iters, resid, err.trace(), error=err, blocks=block_reports
        )
    out_values = {name: point[name] for name in sub.outputs}
    status = CONVERGED if resid <= 10 * opts.tol else ITER_LIMIT
    return out_values, BlockSolveReport(
        status, total_iters, resid, blocks=block_reports
    )


def _solve_scalar(equation, output, point, opts, lower_bounds):
    """Guarded scalar Newton with a bisection fallback once a sign change
    bracket is known."""
    lb = lower_bounds.get(output) if lower_bounds else None
    trial = dict(point)
    x = float(point[output])
    if opts.clip and lb is not None and x - lb < opts.clip_floor:
        x = lb + opts.clip_floor

    def f(v):
        trial[output] = v
        return ex.evaluate(equation.residual, trial)

    def fprime(v):
        trial[output] = v
        return ex.gradient(equation.residual, trial).get(output, 0.0)

    try:
        fx = f(x)
    except ex.EvalError as err:
        err.add_context(f"initial point of scalar block {equation.name!r}")
        return {output: x}, BlockSolveReport(EVAL_ERROR, 0, math.inf, err.trace(), error=err)

    bracket = None  # (lo, hi) with f(lo)*f(hi) < 0
    for it in range(opts.max_iter):
        if abs(fx) <= opts.tol:
            return {output: x}, BlockSolveReport(CONVERGED, it, abs(fx))
        dfx = fprime(x)
        if dfx == 0.0:
            if bracket is None:
                return {output: x}, BlockSolveReport(
                    SINGULAR, it, abs(fx), f"zero derivative in {equation.name!r}"
                )
            step = None
        else:
            step = -fx / dfx

        x_new = None
        if step is not None:
            cand = x + step
            if opts.clip and lb is not None:
                cand = max(cand, lb + max(opts.clip_fraction * (x - lb), opts.clip_floor))
            if bracket is None or (bracket[0] < cand < bracket[1]):
                x_new = cand
        if x_new is None and bracket is not None:
            x_new = 0.5 * (bracket[0] + bracket[1])

        # Halve toward the current point on domain errors or wild steps.
        attempts = 0
        while True:
            try:
                fx_new = f(x_new)
                break
            except ex.EvalError as err:
                if not opts.clip:
                    err.add_context(f"scalar Newton step in {equation.name!r}")
                    return {output: x}, BlockSolveReport(
                        EVAL_ERROR, it, abs(fx), err.trace(), error=err
                    )
                attempts += 1
                x_new = 0.5 * (x + x_new)
                if attempts > 60:
                    return {output: x}, BlockSolveReport(
                        ITER_LIMIT, it, abs(fx), "step shrank to nothing on domain errors"
                    )
        if fx * fx_new < 0:
            bracket = (min(x, x_new), max(x, x_new))
        elif bracket is not None:
            lo, hi = bracket
            if fx_new * f(lo) < 0:
                bracket = (lo, x_new) if x_new > lo else (x_new, lo)
        x, fx = x_new, fx_new

    resid = abs(fx)
    status = CONVERGED if resid <= opts.tol else ITER_LIMIT
    return {output: x}, BlockSolveReport(status, opts.max_iter, resid)
