"""Desk-scale primal-dual interior-point solver for NlpModel instances.

Inequalities get positive slacks, bounds and slacks get a log barrier, and
the perturbed KKT system is solved by damped Newton with a dense symmetric
indefinite factorization plus inertia correction. Second derivatives come
from a damped BFGS approximation of the Lagrangian Hessian, so the same
mechanism serves explicit constraints and implicit-function rows.

Termination statuses follow a four-way taxonomy: Optimal, IterationLimit,
ConvergedInfeasible, EvalError. Every Optimal claim is checkable against
:func:`kkt_residual`, which recomputes the residuals from the raw model.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg

from . import expr as ex
from .model import EQ, INEQ, NlpModel

__all__ = [
    "SolveOptions",
    "SolveResult",
    "KktResidual",
    "solve",
    "kkt_residual",
    "OPTIMAL",
    "ITERATION_LIMIT",
    "CONVERGED_INFEASIBLE",
    "EVAL_ERROR",
]

OPTIMAL = "Optimal"
ITERATION_LIMIT = "IterationLimit"
CONVERGED_INFEASIBLE = "ConvergedInfeasible"
EVAL_ERROR = "EvalError"


@dataclass
class SolveOptions:
    tol: float = 1e-7
    max_iter: int = 300
    mu_init: float = 1e-2
    mu_reduce: float = 0.2          # monotone barrier reduction factor
    tau_min: float = 0.99           # fraction-to-boundary parameter floor
    bound_push: float = 1e-8        # minimal interior offset at the start
    bound_frac: float = 1e-8
    fail_hard: bool = False         # abort on the first trial-point EvalError
    log_stream: object = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.0 < self.tau_min < 1.0:
            raise ValueError("tau_min must be in (0, 1)")


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class SolveResult:
    status: str
    iterations: int
    wall_time: float
    objective: Optional[float]
    solution: Dict[str, float]
    kkt: Optional[KktResidual]
    multipliers: Optional[dict] = None
    message: str = ""


class _Problem:
    """Dense view of an NlpModel for the solver: minimize -objective."""

    def __init__(self, model: NlpModel):
        self.model = model
        self.var_names = list(model.variables)
        self.n = len(self.var_names)
        self.pos = {name: i for i, name in enumerate(self.var_names)}
        self.lb = np.array([model.variables[v].lb for v in self.var_names])
        self.ub = np.array([model.variables[v].ub for v in self.var_names])
        self.eq_cons = [c for c in model.constraints if c.kind == EQ]
        self.ineq_cons = [c for c in model.constraints if c.kind == INEQ]
        self.blocks = list(model.external_blocks)
        self.m_eq = len(self.eq_cons) + sum(len(b.row_names) for b in self.blocks)
        self.m_in = len(self.ineq_cons)
        if model.objective is None:
            raise ValueError("model has no objective")

    def point(self, x: np.ndarray) -> Dict[str, float]:
        values = {name: float(x[i]) for i, name in enumerate(self.var_names)}
        return self.model.eval_point(values)

    def objective(self, x) -> float:
        return ex.evaluate(self.model.objective, self.point(x))

    def eval_f_grad(self, x):
        point = self.point(x)
        f = ex.evaluate(self.model.objective, point)
        g = ex.gradient(self.model.objective, point)
        grad = np.zeros(self.n)
        for name, val in g.items():
            i = self.pos.get(name)
            if i is not None:
                grad[i] = val
        return -f, -grad  # solver minimizes

    def eval_eq(self, x) -> np.ndarray:
        point = self.point(x)
        vals = [ex.evaluate(c.residual, point) for c in self.eq_cons]
        for b in self.blocks:
            vals.extend(b.residuals(point))
        return np.array(vals)

    def eval_ineq(self, x) -> np.ndarray:
        point = self.point(x)
        return np.array([ex.evaluate(c.residual, point) for c in self.ineq_cons])

    def eval_jac_eq(self, x) -> np.ndarray:
        point = self.point(x)
        J = np.zeros((self.m_eq, self.n))
        rows = ex.jacobian([c.residual for c in self.eq_cons], point)
        for i, row in enumerate(rows):
            for name, val in row.items():
                j = self.pos.get(name)
                if j is not None:
                    J[i, j] = val
        i = len(self.eq_cons)
        for b in self.blocks:
            for row in b.jacobian(point):
                for name, val in row.items():
                    j = self.pos.get(name)
                    if j is not None:
                        J[i, j] = val
                i += 1
        return J

    def eval_jac_ineq(self, x) -> np.ndarray:
        point = self.point(x)
        J = np.zeros((self.m_in, self.n))
        rows = ex.jacobian([c.residual for c in self.ineq_cons], point)
        for i, row in enumerate(rows):
            for name, val in row.items():
                j = self.pos.get(name)
                if j is not None:
                    J[i, j] = val
        return J


def _inertia(D):
    """(positive, negative, zero) eigenvalue counts of an LDL^T block
    diagonal factor with 1x1 and 2x2 blocks."""
    n = D.shape[0]
    pos = neg = zero = 0
    i = 0
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            a, b, d = D[i, i], D[i + 1, i], D[i + 1, i + 1]
            det = a * d - b * b
            tr = a + d
            if det < 0:
                pos += 1
                neg += 1
            elif det > 0:
                if tr > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 2
            i += 2
        else:
            d = D[i, i]
            if d > 0:
                pos += 1
            elif d < 0:
                neg += 1
            else:
                zero += 1
            i += 1
    return pos, neg, zero


def solve(model: NlpModel, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Interior-point solve of a (maximize) NlpModel."""
    t0 = time.perf_counter()
    try:
        result = _solve_inner(model, opts)
    except ex.EvalError as err:
        # Evaluation failed somewhere no backtracking could recover from.
        result = SolveResult(
            status=EVAL_ERROR,
            iterations=0,
            wall_time=0.0,
            objective=None,
            solution={},
            kkt=None,
            message=err.trace(),
        )
    result.wall_time = time.perf_counter() - t0
    return result


def _solve_inner(model: NlpModel, opts: SolveOptions) -> SolveResult:
    p = _Problem(model)
    n, m_eq, m_in = p.n, p.m_eq, p.m_in

    # Primal start: clipped initial values pushed strictly inside bounds.
    x = np.array([model.variables[v].init for v in p.var_names], dtype=float)
    lb, ub = p.lb, p.ub
    span = np.where(np.isfinite(lb) & np.isfinite(ub), ub - lb, 1.0)
    push_lo = np.where(
        np.isfinite(lb), lb + np.maximum(opts.bound_push, opts.bound_frac * span), -np.inf
    )
    push_hi = np.where(
        np.isfinite(ub), ub - np.maximum(opts.bound_push, opts.bound_frac * span), np.inf
    )
    x = np.minimum(np.maximum(x, push_lo), push_hi)

    # First evaluation; failure here is unrecoverable by construction.
    try:
        f, grad_f = p.eval_f_grad(x)
        c_eq = p.eval_eq(x)
        c_in = p.eval_ineq(x)
    except ex.EvalError as err:
        raise err.add_context("evaluating the initial point")

    # Gradient-based row scaling, computed once at the start.
    try:
        J_eq = p.eval_jac_eq(x)
        J_in = p.eval_jac_ineq(x)
    except ex.EvalError as err:
        raise err.add_context("evaluating the initial Jacobian")
    with np.errstate(divide="ignore"):
        r_eq = np.minimum(1.0, 100.0 / np.maximum(np.abs(J_eq).max(axis=1, initial=0.0), 1e-12))
        r_in = np.minimum(1.0, 100.0 / np.maximum(np.abs(J_in).max(axis=1, initial=0.0), 1e-12))
    obj_scale = min(1.0, 100.0 / max(np.abs(grad_f).max(initial=0.0), 1e-12))

    s = np.maximum(-c_in, 1e-2)  # slacks: c_in + s = 0, s > 0
    lam = np.zeros(m_eq + m_in)
    has_lb = np.isfinite(lb)
    has_ub = np.isfinite(ub)
    mu = opts.mu_init
    z_lo = np.where(has_lb, mu / np.maximum(x - lb, 1e-8), 0.0)
    z_hi = np.where(has_ub, mu / np.maximum(ub - x, 1e-8), 0.0)
    z_s = np.full(m_in, mu) / s

    H = np.eye(n)  # BFGS approximation of the x-block Lagrangian Hessian
    prev_grad_lag = None
    prev_x = None

    nv = n + m_in  # primal unknowns: x and slacks
    iters_done = 0
    small_step_strikes = 0
    message = ""

    def scaled(c_eq_raw, c_in_raw):
        return r_eq * c_eq_raw, r_in * c_in_raw

    def kkt_errors(grad_f_, Jeq_, Jin_, ceq_, cin_, s_, lam_, zlo_, zhi_, zs_, mu_):
        lam_eq = lam_[:m_eq]
        lam_in = lam_[m_eq:]
        stat_x = (
            obj_scale * grad_f_
            + Jeq_.T @ (r_eq * lam_eq)
            + Jin_.T @ (r_in * lam_in)
            - zlo_
            + zhi_
        )
        stat_s = r_in * lam_in - zs_
        stat = max(
            np.abs(stat_x).max(initial=0.0), np.abs(stat_s).max(initial=0.0)
        )
        feas = max(
            np.abs(ceq_).max(initial=0.0),
            np.abs(cin_ + s_).max(initial=0.0) if m_in else 0.0,
        )
        comp_terms = [
            np.abs(zlo_[has_lb] * (x[has_lb] - lb[has_lb]) - mu_)
            if has_lb.any()
            else np.zeros(0),
            np.abs(zhi_[has_ub] * (ub[has_ub] - x[has_ub]) - mu_)
            if has_ub.any()
            else np.zeros(0),
            np.abs(zs_ * s_ - mu_) if m_in else np.zeros(0),
        ]
        comp = max((t.max() for t in comp_terms if t.size), default=0.0)
        return stat, feas, comp

    delta_w_last = 0.0
    for it in range(opts.max_iter):
        iters_done = it
        ceq_s, cin_s = scaled(c_eq, c_in)
        stat, feas, comp = kkt_errors(
            grad_f, J_eq, J_in, c_eq, c_in, s, lam, z_lo, z_hi, z_s, 0.0
        )
        if opts.log_stream is not None:
            print(
                f"iter {it:3d} obj={-f / 1.0:+.6e} stat={stat:.2e} "
                f"feas={feas:.2e} comp={comp:.2e} mu={mu:.1e}",
                file=opts.log_stream,
            )
        if max(stat, feas, comp) <= opts.tol:
            return _finish(p, x, s, lam, z_lo, z_hi, z_s, it, OPTIMAL, obj_scale, r_eq, r_in)

        # Barrier update on inner convergence.
        stat_mu, feas_mu, comp_mu = kkt_errors(
            grad_f, J_eq, J_in, c_eq, c_in, s, lam, z_lo, z_hi, z_s, mu
        )
        while max(stat_mu, feas_mu, comp_mu) <= 10.0 * mu and mu > opts.tol / 20.0:
            mu = max(opts.tol / 20.0, min(opts.mu_reduce * mu, mu**1.5))
            stat_mu, feas_mu, comp_mu = kkt_errors(
                grad_f, J_eq, J_in, c_eq, c_in, s, lam, z_lo, z_hi, z_s, mu
            )
        tau = max(opts.tau_min, 1.0 - mu)

        # Assemble the reduced primal-dual KKT matrix over (x, s, lam).
        sig_lo = np.where(has_lb, z_lo / np.maximum(x - lb, 1e-300), 0.0)
        sig_hi = np.where(has_ub, z_hi / np.maximum(ub - x, 1e-300), 0.0)
        sig_s = z_s / s if m_in else np.zeros(0)

        J = np.zeros((m_eq + m_in, nv))
        J[:m_eq, :n] = r_eq[:, None] * J_eq
        if m_in:
            J[m_eq:, :n] = r_in[:, None] * J_in
            J[m_eq:, n:] = np.eye(m_in)

        rhs_x = (
            obj_scale * grad_f
            + J_eq.T @ (r_eq * lam[:m_eq])
            + J_in.T @ (r_in * lam[m_eq:])
            - np.where(has_lb, mu / np.maximum(x - lb, 1e-300), 0.0)
            + np.where(has_ub, mu / np.maximum(ub - x, 1e-300), 0.0)
        )
        rhs_s = r_in * lam[m_eq:] - mu / s if m_in else np.zeros(0)
        rhs_c = np.concatenate([ceq_s, cin_s + s]) if m_in else ceq_s

        delta_w = 0.0
        delta_c = 0.0
        for attempt in range(12):
            K = np.zeros((nv + m_eq + m_in, nv + m_eq + m_in))
            K[:n, :n] = obj_scale * H
            K[:n, :n][np.diag_indices(n)] += sig_lo + sig_hi + delta_w
            if m_in:
                K[n:nv, n:nv] = np.diag(sig_s + delta_w)
            K[:nv, nv:] = J.T
            K[nv:, :nv] = J
            if delta_c:
                K[nv:, nv:] = -delta_c * np.eye(m_eq + m_in)
            try:
                L, D, perm = scipy.linalg.ldl(K)
                pos, neg, zero = _inertia(D)
            except Exception:
                pos, neg, zero = 0, 0, 1
            if pos == nv and neg == m_eq + m_in and zero == 0:
                break
            if zero:
                delta_c = max(1e-10, math.sqrt(np.finfo(float).eps) * mu**0.25)
            delta_w = (
                max(1e-20, 0.33 * delta_w_last)
                if delta_w == 0.0 and delta_w_last > 0.0
                else (1e-4 if delta_w == 0.0 else 8.0 * delta_w)
            )
        else:
            return _finish(
                p, x, s, lam, z_lo, z_hi, z_s, it, CONVERGED_INFEASIBLE,
                obj_scale, r_eq, r_in,
                message="KKT matrix could not be regularized",
            )
        if delta_w > 0:
            delta_w_last = delta_w

        rhs = -np.concatenate([rhs_x, rhs_s, rhs_c])
        try:
            step = _ldl_solve(L, D, perm, rhs)
        except np.linalg.LinAlgError:
            return _finish(
                p, x, s, lam, z_lo, z_hi, z_s, it, CONVERGED_INFEASIBLE,
                obj_scale, r_eq, r_in, message="singular KKT system",
            )
        dx = step[:n]
        ds = step[n:nv]
        dlam = step[nv:]

        dz_lo = np.where(
            has_lb, mu / np.maximum(x - lb, 1e-300) - z_lo - sig_lo * dx, 0.0
        )
        dz_hi = np.where(
            has_ub, mu / np.maximum(ub - x, 1e-300) - z_hi + sig_hi * dx, 0.0
        )
        dz_s = (mu / s - z_s - sig_s * ds) if m_in else np.zeros(0)

        # Fraction-to-boundary step limits.
        alpha_pr = 1.0
        for vec, dvec, low in ((x[has_lb], dx[has_lb], lb[has_lb]),):
            if vec.size:
                gap = vec - low
                neg_d = dvec < 0
                if neg_d.any():
                    alpha_pr = min(
                        alpha_pr, float(np.min(-tau * gap[neg_d] / dvec[neg_d]))
                    )
        if has_ub.any():
            gap = ub[has_ub] - x[has_ub]
            dvec = dx[has_ub]
            pos_d = dvec > 0
            if pos_d.any():
                alpha_pr = min(alpha_pr, float(np.min(tau * gap[pos_d] / dvec[pos_d])))
        if m_in:
            neg_d = ds < 0
            if neg_d.any():
                alpha_pr = min(alpha_pr, float(np.min(-tau * s[neg_d] / ds[neg_d])))

        alpha_du = 1.0
        for zvec, dzvec in ((z_lo[has_lb], dz_lo[has_lb]), (z_hi[has_ub], dz_hi[has_ub]), (z_s, dz_s)):
            if zvec.size:
                neg_d = dzvec < 0
                if neg_d.any():
                    alpha_du = min(
                        alpha_du, float(np.min(-tau * zvec[neg_d] / dzvec[neg_d]))
                    )

        # Backtracking line search on the barrier merit function.
        nu = max(1.0, float(np.abs(lam + dlam).max(initial=0.0)) * 1.5)
        theta0 = float(np.abs(rhs_c).max(initial=0.0))

        def barrier_value(x_, s_):
            fv = obj_scale * -p.objective(x_)
            bar = 0.0
            if has_lb.any():
                bar -= mu * float(np.sum(np.log(x_[has_lb] - lb[has_lb])))
            if has_ub.any():
                bar -= mu * float(np.sum(np.log(ub[has_ub] - x_[has_ub])))
            if m_in:
                bar -= mu * float(np.sum(np.log(s_)))
            return fv + bar

        try:
            phi0 = barrier_value(x, s)
        except (ex.EvalError, ValueError) as err:
            if isinstance(err, ex.EvalError):
                raise err.add_context("barrier evaluation at the current point")
            raise
        merit0 = phi0 + nu * theta0

        alpha = alpha_pr
        accepted = False
        eval_failures = 0
        for _ in range(40):
            x_new = x + alpha * dx
            s_new = s + alpha * ds if m_in else s
            try:
                ceq_new = p.eval_eq(x_new)
                cin_new = p.eval_ineq(x_new)
                ceq_new_s, cin_new_s = scaled(ceq_new, cin_new)
                theta_new = float(
                    np.abs(
                        np.concatenate([ceq_new_s, cin_new_s + s_new])
                        if m_in
                        else ceq_new_s
                    ).max(initial=0.0)
                )
                phi_new = barrier_value(x_new, s_new)
            except (ex.EvalError, ValueError) as err:
                if opts.fail_hard and isinstance(err, ex.EvalError):
                    raise err.add_context("trial point evaluation with fail-hard set")
                eval_failures += 1
                alpha *= 0.5
                if alpha < 1e-14:
                    break
                continue
            merit_new = phi_new + nu * theta_new
            if merit_new <= merit0 - 1e-8 * alpha * max(theta0, 1e-12) or merit_new <= merit0 + 1e-12 * abs(
                merit0
            ):
                accepted = True
                break
            alpha *= 0.5
            if alpha < 1e-14:
                break

        if not accepted:
            small_step_strikes += 1
            if small_step_strikes >= 3:
                status = CONVERGED_INFEASIBLE if feas > opts.tol else ITERATION_LIMIT
                return _finish(
                    p, x, s, lam, z_lo, z_hi, z_s, it, status, obj_scale, r_eq, r_in,
                    message="line search failed to find an acceptable step",
                )
            mu = max(opts.tol / 20.0, mu * 0.1)
            continue
        small_step_strikes = 0

        x = x + alpha * dx
        if m_in:
            s = s + alpha * ds
        lam = lam + alpha * dlam
        z_lo = np.where(has_lb, np.maximum(z_lo + alpha_du * dz_lo, 1e-16), 0.0)
        z_hi = np.where(has_ub, np.maximum(z_hi + alpha_du * dz_hi, 1e-16), 0.0)
        if m_in:
            z_s = np.maximum(z_s + alpha_du * dz_s, 1e-16)

        # Keep bound duals within a multiple of the barrier target.
        if has_lb.any():
            gap = np.maximum(x[has_lb] - lb[has_lb], 1e-300)
            z_lo[has_lb] = np.clip(z_lo[has_lb], mu / (1e10 * gap), 1e10 * mu / gap)
        if has_ub.any():
            gap = np.maximum(ub[has_ub] - x[has_ub], 1e-300)
            z_hi[has_ub] = np.clip(z_hi[has_ub], mu / (1e10 * gap), 1e10 * mu / gap)
        if m_in:
            z_s = np.clip(z_s, mu / (1e10 * s), 1e10 * mu / s)

        try:
            f, grad_f_new = p.eval_f_grad(x)
            c_eq = p.eval_eq(x)
            c_in = p.eval_ineq(x)
            J_eq_new = p.eval_jac_eq(x)
            J_in_new = p.eval_jac_ineq(x)
        except ex.EvalError as err:
            raise err.add_context("evaluating the accepted iterate")

        # Damped BFGS update of the Lagrangian Hessian in x.
        grad_lag_new = (
            obj_scale * grad_f_new
            + J_eq_new.T @ (r_eq * lam[:m_eq])
            + J_in_new.T @ (r_in * lam[m_eq:])
        )
        grad_lag_old = (
            obj_scale * grad_f
            + J_eq.T @ (r_eq * lam[:m_eq])
            + J_in.T @ (r_in * lam[m_eq:])
        )
        step_x = alpha * dx
        y_vec = grad_lag_new - grad_lag_old
        sBs = float(step_x @ (H @ step_x))
        sy = float(step_x @ y_vec)
        if sBs > 1e-16 and float(step_x @ step_x) > 1e-20:
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y_vec = theta * y_vec + (1 - theta) * (H @ step_x)
                sy = float(step_x @ y_vec)
            if sy > 1e-12:
                Hs = H @ step_x
                H = H - np.outer(Hs, Hs) / sBs + np.outer(y_vec, y_vec) / sy
                if not np.all(np.isfinite(H)):
                    H = np.eye(n)

        grad_f, J_eq, J_in = grad_f_new, J_eq_new, J_in_new

    return _finish(
        p, x, s, lam, z_lo, z_hi, z_s, iters_done + 1, ITERATION_LIMIT,
        obj_scale, r_eq, r_in, message="iteration limit reached",
    )


def _ldl_solve(L, D, perm, b):
    # K = L D L^T with rows permuted; scipy returns L with permutation applied.
    Lp = L[perm]
    y = scipy.linalg.solve_triangular(Lp, b[perm], lower=True, unit_diagonal=True)
    # D is block diagonal (1x1 / 2x2); solve directly.
    z = np.linalg.solve(D, y)
    w = scipy.linalg.solve_triangular(Lp.T, z, lower=False, unit_diagonal=True)
    out = np.empty_like(w)
    out[perm] = w
    return out


def _finish(p, x, s, lam, z_lo, z_hi, z_s, iters, status, obj_scale, r_eq, r_in, message=""):
    model = p.model
    solution = {name: float(x[i]) for i, name in enumerate(p.var_names)}
    multipliers = {
        "eq": (r_eq * lam[: p.m_eq] / obj_scale),
        "ineq": (r_in * lam[p.m_eq :] / obj_scale) if p.m_in else np.zeros(0),
        "z_lo": z_lo / obj_scale,
        "z_hi": z_hi / obj_scale,
        "eq_names": [c.name for c in p.eq_cons]
        + [name for b in p.blocks for name in b.row_names],
        "ineq_names": [c.name for c in p.ineq_cons],
    }
    try:
        obj = p.objective(x)
        kkt = kkt_residual(model, solution, multipliers)
    except ex.EvalError:
        obj = None
        kkt = None
    return SolveResult(
        status=status,
        iterations=iters,
        wall_time=0.0,
        objective=obj,
        solution=solution,
        kkt=kkt,
        multipliers=multipliers,
        message=message,
    )


def kkt_residual(model: NlpModel, point: Dict[str, float], multipliers: dict) -> KktResidual:
    """Unscaled KKT residuals at a point, recomputed from the raw model.

    ``multipliers`` carries equality and inequality multipliers plus bound
    duals, in the layout produced by :func:`solve`. The objective is treated
    as maximized, matching the model contract.
    """
    p = _Problem(model)
    x = np.array([point[v] for v in p.var_names])
    lam_eq = np.asarray(multipliers["eq"], dtype=float)
    lam_in = np.asarray(multipliers["ineq"], dtype=float)
    z_lo = np.asarray(multipliers["z_lo"], dtype=float)
    z_hi = np.asarray(multipliers["z_hi"], dtype=float)

    _, grad_f = p.eval_f_grad(x)  # gradient of the minimized objective
    J_eq = p.eval_jac_eq(x)
    J_in = p.eval_jac_ineq(x)
    c_eq = p.eval_eq(x)
    c_in = p.eval_ineq(x)

    stat = grad_f + J_eq.T @ lam_eq - z_lo + z_hi
    if p.m_in:
        stat = stat + J_in.T @ lam_in

    has_lb = np.isfinite(p.lb)
    has_ub = np.isfinite(p.ub)
    feas = max(
        np.abs(c_eq).max(initial=0.0),
        np.maximum(c_in, 0.0).max(initial=0.0) if p.m_in else 0.0,
        np.maximum(p.lb - x, 0.0).max(initial=0.0),
        np.maximum(x - p.ub, 0.0).max(initial=0.0),
    )
    comp_terms = []
    if p.m_in:
        comp_terms.append(np.abs(lam_in * c_in))
    if has_lb.any():
        comp_terms.append(np.abs(z_lo[has_lb] * (x[has_lb] - p.lb[has_lb])))
    if has_ub.any():
        comp_terms.append(np.abs(z_hi[has_ub] * (p.ub[has_ub] - x[has_ub])))
    comp = max((t.max() for t in comp_terms if t.size), default=0.0)
    return KktResidual(
        stationarity=float(np.abs(stat).max(initial=0.0)),
        feasibility=float(feas),
        complementarity=float(comp),
    )
