"""Entropy functional, its dissipation, and the computable inequality checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coeffs import CoefficientMatrix
from .errors import GridMismatch, NonNegativityViolated, ValidationError
from .torusfield import (
    Grid,
    ScalarField,
    dirichlet_matrix,
    exp_integral,
    grad_norm_sq,
    mean,
    psum,
    upsample,
)

MEAN_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Coupling matrix, coefficient functions ``h_j`` and the Hoelder exponent ``q``.

    ``h_funcs`` optionally keeps the analytic form of each ``h_j`` so the
    problem can be re-sampled exactly on a finer grid.
    """

    matrix: CoefficientMatrix
    h: tuple[ScalarField, ...]
    q: float = 2.0
    h_funcs: tuple[Callable, ...] | None = None
    h_max: tuple[float, ...] = field(init=False)
    h_root_mass: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        h = tuple(self.h)
        object.__setattr__(self, "h", h)
        if len(h) != self.matrix.n:
            raise ValidationError("h", f"expected {self.matrix.n} coefficient functions, got {len(h)}")
        if not self.q > 1.0:
            raise ValidationError("q", f"q must exceed 1, got {self.q}")
        grid = h[0].grid
        h_max, root_mass = [], []
        for j, hj in enumerate(h):
            if hj.grid != grid:
                raise GridMismatch(f"h[{j}] lives on {hj.grid}, expected {grid}")
            if hj.min() < -1e-14:
                raise NonNegativityViolated(f"h[{j}] has minimum {hj.min():.3e} < 0")
            vals = np.maximum(hj.values, 0.0)
            if not vals.max() > 0.0:
                raise ValidationError(f"h[{j}]", "coefficient function vanishes identically")
            h_max.append(float(vals.max()))
            root_mass.append(grid.cell_weight * psum(vals ** (1.0 / self.q)))
        object.__setattr__(self, "h_max", tuple(h_max))
        object.__setattr__(self, "h_root_mass", tuple(root_mass))

    @property
    def n(self) -> int:
        return self.matrix.n

    @property
    def grid(self) -> Grid:
        return self.h[0].grid

    def on_grid(self, grid: Grid) -> "ProblemData":
        """The same problem sampled on ``grid`` (analytic if possible, else interpolated)."""
        if grid == self.grid:
            return self
        if self.h_funcs is not None:
            h = tuple(grid.sample(fn) for fn in self.h_funcs)
        else:
            factor = grid.N // self.grid.N
            if factor * self.grid.N != grid.N or grid.dim != self.grid.dim:
                raise GridMismatch(f"cannot interpolate {self.grid} onto {grid}")
            h = tuple(
                ScalarField(grid, np.maximum(upsample(hj, factor).values, 0.0)) for hj in self.h
            )
        return ProblemData(self.matrix, h, self.q, self.h_funcs)


@dataclass(frozen=True, eq=False)
class FlowState:
    """The n fields ``u_1..u_n`` at time ``t``."""

    t: float
    u: tuple[ScalarField, ...]

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(self.u))
        grid = self.u[0].grid
        for ui in self.u[1:]:
            if ui.grid != grid:
                raise GridMismatch("state components live on different grids")

    @classmethod
    def from_array(cls, grid: Grid, values, t: float = 0.0) -> "FlowState":
        values = np.asarray(values, dtype=float).reshape((-1,) + grid.shape)
        return cls(float(t), tuple(ScalarField(grid, v) for v in values))

    @property
    def grid(self) -> Grid:
        return self.u[0].grid

    @property
    def n(self) -> int:
        return len(self.u)

    def array(self) -> np.ndarray:
        return np.stack([ui.values for ui in self.u])

    def means(self) -> list[float]:
        return [mean(ui) for ui in self.u]

    def mean_defect(self) -> float:
        return max(abs(m) for m in self.means())

    def is_mean_zero(self, tol: float = MEAN_TOL) -> bool:
        return self.mean_defect() <= tol


@dataclass(frozen=True)
class EntropyReport:
    K: float
    dirichlet_part: float
    log_masses: tuple[float, ...]
    grad_energy: float
    entropy_gap: float
    sup_norms: tuple[float, ...]
    log_plain_masses: tuple[float, ...]  # log int e^{u_j}


def _check_consistent(state: FlowState, prob: ProblemData) -> None:
    if state.n != prob.n:
        raise ValueError(f"state has {state.n} components, problem has {prob.n}")
    if state.grid != prob.grid:
        raise GridMismatch(f"state grid {state.grid} != problem grid {prob.grid}")


def entropy(state: FlowState, prob: ProblemData) -> EntropyReport:
    """Evaluate ``K = 1/2 sum a^ij int grad u_i . grad u_j - sum_j log int h_j e^{u_j}``."""
    _check_consistent(state, prob)
    pairings = dirichlet_matrix(state.u)
    dirichlet_part = 0.5 * float(np.sum(prob.matrix.inverse * pairings))
    log_masses = tuple(exp_integral(uj, hj).log for uj, hj in zip(state.u, prob.h))
    log_plain = tuple(exp_integral(uj).log for uj in state.u)
    gap = sum(np.log(m) + lp - lm for m, lp, lm in zip(prob.h_max, log_plain, log_masses))
    return EntropyReport(
        K=dirichlet_part - sum(log_masses),
        dirichlet_part=dirichlet_part,
        log_masses=log_masses,
        grad_energy=float(np.trace(pairings)),
        entropy_gap=float(gap),
        sup_norms=tuple(float(np.abs(uj.values).max()) for uj in state.u),
        log_plain_masses=log_plain,
    )


def dissipation(u_t: Sequence[ScalarField], matrix: CoefficientMatrix) -> float:
    """``sum_ij a^ij int u_t,i u_t,j``; minus the entropy's time derivative."""
    u_t = list(u_t)
    grid = u_t[0].grid
    for f in u_t[1:]:
        if f.grid != grid:
            raise GridMismatch("rate fields live on different grids")
    stack = np.stack([f.values.ravel() for f in u_t])
    total = 0.0
    for i in range(len(u_t)):
        for j in range(len(u_t)):
            total += matrix.inverse[i, j] * grid.cell_weight * psum(stack[i] * stack[j])
    return total


def mt_deficit(f: ScalarField, p: float, beta: float) -> float:
    """``log int e^{2p(f - mean f)} - (p^2/beta) int |grad f|^2``.

    Bounded above by ``log C_TM(beta)`` for every field when ``beta < 4 pi``.
    """
    if not 0.0 < beta < 4.0 * np.pi:
        raise ValueError(f"beta must lie in (0, 4*pi), got {beta}")
    if p == 0.0:
        return 0.0
    centred = f - mean(f)
    return exp_integral(centred, None, 2.0 * p).log - (p * p / beta) * grad_norm_sq(f)


def entropy_gap(state: FlowState, prob: ProblemData) -> float:
    """``sum_j [log(M_j int e^{u_j}) - log int h_j e^{u_j}]``; nonnegative since ``h_j <= M_j``."""
    return entropy(state, prob).entropy_gap


def gradient_energy_bound(report: EntropyReport, K0: float, prob: ProblemData) -> float:
    """Upper bound on ``sum_j int |grad u_j|^2`` free of the Moser-Trudinger constant.

    ``(2/(lam - 1/(2 beta))) * (K(0) + sum_j log(M_j int e^{u_j}))``; it
    follows from ``K(t) <= K(0)``, ``h_j <= M_j`` and ``A^-1 >= lam``.
    """
    bracket = K0 + sum(np.log(m) + lp for m, lp in zip(prob.h_max, report.log_plain_masses))
    return prob.matrix.gradient_bound_factor * bracket


def h_mass_lower_bound(prob: ProblemData, state: FlowState, j: int, q: float | None = None):
    """Hoelder lower bound on the mass ``int h_j e^{u_j}``.

    Returns ``(bound, actual)`` with
    ``bound = (int h_j^{1/q})^q * (int e^{-u_j/(q-1)})^{-(q-1)}``.
    """
    _check_consistent(state, prob)
    q = prob.q if q is None else float(q)
    if not q > 1.0:
        raise ValueError(f"q must exceed 1, got {q}")
    uj, hj = state.u[j], prob.h[j]
    actual = exp_integral(uj, hj)
    if q == prob.q:
        root_mass = prob.h_root_mass[j]
    else:
        root_mass = hj.grid.cell_weight * psum(np.maximum(hj.values, 0.0) ** (1.0 / q))
    log_bound = q * np.log(root_mass) - (q - 1.0) * exp_integral(uj, None, -1.0 / (q - 1.0)).log
    return float(np.exp(log_bound)), actual.value
