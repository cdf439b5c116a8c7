"""Time integration of the normalized exponential-reaction parabolic system.

Each component obeys ``du_i/dt = lap u_i + sum_j a_ij (h_j e^{u_j} / int h_j e^{u_j} - 1)``.
The Laplacian is treated implicitly (an exact diagonal solve in Fourier
space) and the bounded, nonlocal reaction explicitly.  ``evolve`` only
accepts steps along which the entropy does not increase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import NonFinite, StepFloor, ZeroMass
from .functionals import (
    EntropyReport,
    FlowState,
    ProblemData,
    dissipation,
    entropy,
    gradient_energy_bound,
    mt_deficit,
)
from .torusfield import Grid, ScalarField, psum

log = logging.getLogger(__name__)

TERMINATIONS = ("steady", "t_end", "max_steps", "failure")


@dataclass
class StepControl:
    tau0: float = 1e-3
    tau_min: float = 1e-10
    tau_max: float = 0.05
    entropy_slack: float = 1e-8
    steady_tol: float = 1e-9
    t_end: float = 10.0
    max_steps: int = 1_000_000
    grow_after: int = 10
    grow_factor: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.tau_min <= self.tau0 <= self.tau_max:
            raise ValueError("step control needs 0 < tau_min <= tau0 <= tau_max")
        if self.entropy_slack < 0.0:
            raise ValueError("entropy_slack must be >= 0")
        if self.steady_tol < 0.0:
            raise ValueError("steady_tol must be >= 0 (0 disables the steady stop)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def densities(u: np.ndarray, prob: ProblemData) -> np.ndarray:
    """Normalized densities ``h_j e^{u_j} / int h_j e^{u_j}``; each integrates to 1."""
    grid = prob.grid
    out = np.empty_like(u)
    for j, hj in enumerate(prob.h):
        hv = np.maximum(hj.values, 0.0)
        shift = u[j][hv > 0].max()
        w = hv * np.exp(u[j] - shift)
        mass = grid.cell_weight * psum(w)
        if not mass > 0.0:
            raise ZeroMass(f"mass of component {j} underflowed")
        out[j] = w / mass
    return out


def _reaction(u: np.ndarray, prob: ProblemData) -> np.ndarray:
    """Stacked reaction terms ``F_i`` for stacked fields ``u`` of shape ``(n, *grid)``."""
    return np.tensordot(prob.matrix.a, densities(u, prob) - 1.0, axes=1)


def _laplacian(u: np.ndarray, grid: Grid) -> np.ndarray:
    axes = tuple(range(1, u.ndim))
    return np.fft.irfftn(-grid.symbol * np.fft.rfftn(u, axes=axes), s=grid.shape, axes=axes)


def _stack_fields(grid: Grid, values: np.ndarray) -> tuple[ScalarField, ...]:
    return tuple(ScalarField(grid, v) for v in values)


def rhs(state: FlowState, prob: ProblemData) -> list[ScalarField]:
    """The reaction fields ``F_i``; each has zero mean up to roundoff."""
    return list(_stack_fields(state.grid, _reaction(state.array(), prob)))


def _imex_update(u: np.ndarray, F: np.ndarray, grid: Grid, tau: float) -> np.ndarray:
    axes = tuple(range(1, u.ndim))
    uh = np.fft.rfftn(u + tau * F, axes=axes) / (1.0 + tau * grid.symbol)
    new = np.fft.irfftn(uh, s=grid.shape, axes=axes)
    means = grid.cell_weight * np.array([psum(c) for c in new])
    new -= means.reshape((-1,) + (1,) * grid.dim)
    if not np.all(np.isfinite(new)):
        raise NonFinite(f"non-finite values after a step of size {tau:g}")
    return new


def step_imex(state: FlowState, prob: ProblemData, tau: float) -> FlowState:
    """One IMEX Euler step: ``(1 - tau lap) u_new = u + tau F(u)``, then mean removal."""
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    u = state.array()
    new = _imex_update(u, _reaction(u, prob), state.grid, tau)
    return FlowState(state.t + tau, _stack_fields(state.grid, new))


class Residual(NamedTuple):
    L2: float
    Linf: float
    fields: list[ScalarField]


def _norms(r: np.ndarray, grid: Grid) -> tuple[float, float]:
    l2 = np.sqrt(sum(grid.cell_weight * psum(c * c) for c in r))
    return float(l2), float(np.abs(r).max())


def residual(state: FlowState, prob: ProblemData) -> Residual:
    """Residual ``lap u_i + F_i`` of the steady (elliptic) system."""
    u = state.array()
    r = _laplacian(u, state.grid) + _reaction(u, prob)
    l2, linf = _norms(r, state.grid)
    return Residual(l2, linf, list(_stack_fields(state.grid, r)))


@dataclass
class TrajectoryRecord:
    """Monitored quantities, one entry per accepted step (row 0 is the initial state)."""

    n: int
    t: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    K: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    grad_energy: list = field(default_factory=list)
    residual_L2: list = field(default_factory=list)
    residual_Linf: list = field(default_factory=list)
    entropy_gap: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)
    means: list = field(default_factory=list)
    mt_deficit_max: list = field(default_factory=list)
    grad_bound: list = field(default_factory=list)
    termination: str | None = None
    rejections: int = 0

    SCALARS = ("t", "tau", "K", "dissipation", "grad_energy", "residual_L2",
               "residual_Linf", "entropy_gap")
    TRAILING = ("mt_deficit_max", "grad_bound")

    def __len__(self):
        return len(self.t)

    def columns(self) -> list[str]:
        return (list(self.SCALARS)
                + [f"sup_norm_{i + 1}" for i in range(self.n)]
                + [f"mean_{i + 1}" for i in range(self.n)]
                + list(self.TRAILING))

    def rows(self):
        for k in range(len(self)):
            yield ([getattr(self, name)[k] for name in self.SCALARS]
                   + list(self.sup_norms[k]) + list(self.means[k])
                   + [getattr(self, name)[k] for name in self.TRAILING])

    def accepted_taus(self) -> np.ndarray:
        return np.asarray(self.tau[1:])


def _record(rec, state, report, K0, prob, tau, diss, res_l2, res_linf):
    rec.t.append(state.t)
    rec.tau.append(tau)
    rec.K.append(report.K)
    rec.dissipation.append(diss)
    rec.grad_energy.append(report.grad_energy)
    rec.residual_L2.append(res_l2)
    rec.residual_Linf.append(res_linf)
    rec.entropy_gap.append(report.entropy_gap)
    rec.sup_norms.append(report.sup_norms)
    rec.means.append(tuple(state.means()))
    rec.mt_deficit_max.append(max(mt_deficit(ui, 0.5, prob.matrix.beta) for ui in state.u))
    rec.grad_bound.append(gradient_energy_bound(report, K0, prob))


Observer = Callable[[FlowState, EntropyReport], None]


def evolve(u0: FlowState, prob: ProblemData, ctl: StepControl,
           observer: Observer | None = None) -> tuple[FlowState, TrajectoryRecord]:
    """Integrate from ``u0`` with entropy-guarded adaptive steps.

    A trial step is accepted when all values stay finite and the entropy
    rises by at most ``ctl.entropy_slack``; otherwise the step is halved.
    After ``ctl.grow_after`` consecutive acceptances the step grows by
    ``ctl.grow_factor`` up to ``ctl.tau_max``.  The run stops when the
    summed L2 norm of the discrete time derivative drops below
    ``ctl.steady_tol``, at ``ctl.t_end``, or after ``ctl.max_steps`` steps.

    Raises
    ------
    StepFloor
        A trial step was rejected at ``tau < ctl.tau_min``; the exception
        carries the last accepted state.
    NonFinite, ZeroMass
        As ``StepFloor``, when the last rejection was caused by overflow.
    """
    if not u0.is_mean_zero():
        raise ValueError(f"initial data must be mean-zero (defect {u0.mean_defect():.3e})")
    grid = u0.grid

    state = u0
    u = state.array()
    F = _reaction(u, prob)
    report = entropy(state, prob)
    K0 = report.K
    rec = TrajectoryRecord(n=prob.n)
    r0 = _laplacian(u, grid) + F
    l2, linf = _norms(r0, grid)
    _record(rec, state, report, K0, prob, 0.0,
            dissipation(_stack_fields(grid, r0), prob.matrix), l2, linf)
    if observer is not None:
        observer(state, report)

    tau = ctl.tau0
    streak = 0
    steps = 0
    t_eps = 1e-12 * max(1.0, abs(ctl.t_end))
    while True:
        if ctl.t_end - state.t <= t_eps:
            rec.termination = "t_end"
            break
        if steps >= ctl.max_steps:
            rec.termination = "max_steps"
            break
        h = min(tau, ctl.t_end - state.t)
        try:
            new_u = _imex_update(u, F, grid, h)
            new_state = FlowState(state.t + h, _stack_fields(grid, new_u))
            new_report = entropy(new_state, prob)
            new_F = _reaction(new_u, prob)
            ok = new_report.K <= report.K + ctl.entropy_slack
            cause = None if ok else "entropy increase"
        except (NonFinite, ZeroMass, ValueError) as exc:
            ok, cause = False, exc
        if not ok:
            rec.rejections += 1
            streak = 0
            tau = 0.5 * h
            log.debug("t=%.6g: rejected step %.3g (%s)", state.t, h, cause)
            if tau < ctl.tau_min:
                rec.termination = "failure"
                if isinstance(cause, (NonFinite, ZeroMass)):
                    raise type(cause)(f"{cause} (step floor {ctl.tau_min:g} reached)")
                raise StepFloor(
                    f"step rejected at tau={tau:.3e} < tau_min={ctl.tau_min:.3e} "
                    f"at t={state.t:.6g} ({cause})", state=state, tau=tau)
            continue

        rate = (new_u - u) / h
        diss = dissipation(_stack_fields(grid, rate), prob.matrix)
        l2, linf = _norms(_laplacian(new_u, grid) + new_F, grid)
        state, u, F, report = new_state, new_u, new_F, new_report
        _record(rec, state, report, K0, prob, h, diss, l2, linf)
        if observer is not None:
            observer(state, report)
        steps += 1

        streak += 1
        if streak >= ctl.grow_after:
            tau = min(ctl.grow_factor * tau, ctl.tau_max)
            streak = 0

        speed = sum(np.sqrt(grid.cell_weight * psum(c * c)) for c in rate)
        if speed < ctl.steady_tol:
            rec.termination = "steady"
            break

    log.info("evolve: %s at t=%.6g after %d steps (%d rejections)",
             rec.termination, state.t, steps, rec.rejections)
    return state, rec


def integrate_fixed(u0: FlowState, prob: ProblemData, tau: float, t_end: float,
                    observer: Callable[[FlowState], None] | None = None) -> FlowState:
    """Take ``round((t_end - t0)/tau)`` IMEX steps of exactly ``tau``, no step control."""
    steps = int(round((t_end - u0.t) / tau))
    grid = u0.grid
    u = u0.array()
    t = u0.t
    for k in range(steps):
        u = _imex_update(u, _reaction(u, prob), grid, tau)
        t = u0.t + (k + 1) * tau
        if observer is not None:
            observer(FlowState(t, _stack_fields(grid, u)))
    return FlowState(t, _stack_fields(grid, u))


def twin_gap(u0: FlowState, delta: FlowState, prob: ProblemData,
             ctl: StepControl) -> tuple[np.ndarray, np.ndarray]:
    """Squared L2 distance between the runs from ``u0`` and ``u0 + delta``.

    Both runs take the same fixed steps of size ``ctl.tau0`` up to
    ``ctl.t_end``.  Returns ``(times, X)`` with ``X(0) = sum_i ||delta_i||^2``.
    """
    if not delta.is_mean_zero():
        raise ValueError("perturbation must be mean-zero")
    grid = u0.grid
    tau = ctl.tau0
    steps = int(round((ctl.t_end - u0.t) / tau))
    if steps > ctl.max_steps:
        raise ValueError(f"{steps} fixed steps exceed max_steps={ctl.max_steps}")
    u = u0.array()
    v = u + delta.array()

    def gap(a, b):
        d = a - b
        return sum(grid.cell_weight * psum(c * c) for c in d)

    times = [u0.t]
    X = [gap(u, v)]
    for k in range(steps):
        u = _imex_update(u, _reaction(u, prob), grid, tau)
        v = _imex_update(v, _reaction(v, prob), grid, tau)
        times.append(u0.t + (k + 1) * tau)
        X.append(gap(u, v))
    return np.array(times), np.array(X)
