"""Newton refinement and certification of steady states.

A steady state solves ``lap u_i + sum_j a_ij (h_j e^{u_j} / int h_j e^{u_j} - 1) = 0``
with every ``u_i`` mean-zero.  The Newton solver here is independent of the
time stepper; agreement of the two is the check that flow limits are
genuine solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NoDescent, SingularLinearization, ZeroMass
from .flow import _laplacian, _norms, _reaction, _stack_fields, densities, residual
from .functionals import FlowState, ProblemData
from .torusfield import Grid, psum, upsample


@dataclass
class NewtonControl:
    max_iters: int = 30
    tol_Linf: float = 1e-11
    damping_floor: float = 2.0**-20
    krylov_rtol: float = 1e-12
    krylov_maxiter: int = 400

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol_Linf > 0.0:
            raise ValueError("tol_Linf must be > 0")


@dataclass
class NewtonResult:
    state: FlowState
    iterations: int
    history: list[float]                 # residual L-infinity norm per iterate
    history_L2: list[float] = field(default_factory=list)
    direction_means: list[float] = field(default_factory=list)
    dampings: list[float] = field(default_factory=list)


def _means(v: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.cell_weight * np.array([psum(c) for c in v])


def _inverse_laplacian(v: np.ndarray, grid: Grid) -> np.ndarray:
    axes = tuple(range(1, v.ndim))
    symbol = grid.symbol.copy()
    symbol.flat[0] = 1.0
    vh = np.fft.rfftn(v, axes=axes) / -symbol
    vh[(slice(None),) + (0,) * grid.dim] = 0.0
    return np.fft.irfftn(vh, s=grid.shape, axes=axes)


def jacobian_action(u: np.ndarray, prob: ProblemData):
    """Return ``v -> J(u) v`` for the residual map on stacked fields.

    The normalized mass term linearizes to ``p_j v_j - p_j int p_j v_j``
    (diagonal plus rank one per component), which maps mean-zero fields to
    mean-zero fields because ``int p_j = 1``.
    """
    grid = prob.grid
    p = densities(u, prob)
    a = prob.matrix.a

    def apply(v: np.ndarray) -> np.ndarray:
        pv = p * v
        local = pv - p * _means(pv, grid).reshape((-1,) + (1,) * grid.dim)
        return _laplacian(v, grid) + np.tensordot(a, local, axes=1)

    return apply


def _solve_direction(u, G, prob, ctl):
    grid = prob.grid
    shape = u.shape
    apply_J = jacobian_action(u, prob)

    def matvec(w):
        w = w.reshape(shape)
        # identity on constants keeps the operator nonsingular; b is mean-zero
        consts = _means(w, grid).reshape((-1,) + (1,) * grid.dim)
        return (apply_J(_inverse_laplacian(w, grid)) + consts).ravel()

    op = LinearOperator((G.size, G.size), matvec=matvec, dtype=float)
    b = -G.ravel()
    trace = []
    w, info = gmres(op, b, rtol=ctl.krylov_rtol, atol=0.0, restart=min(100, G.size),
                    maxiter=ctl.krylov_maxiter, callback=trace.append, callback_type="pr_norm")
    rel = np.linalg.norm(matvec(w) - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
    if info != 0 and rel > 1e-6:
        raise SingularLinearization(
            f"inner GMRES stagnated (info={info}, relative residual {rel:.3e})", history=trace)
    return _inverse_laplacian(w.reshape(shape), grid)


def _residual_array(u, prob):
    return _laplacian(u, prob.grid) + _reaction(u, prob)


def newton_refine(state: FlowState, prob: ProblemData,
                  ctl: NewtonControl | None = None) -> NewtonResult:
    """Damped Newton iteration for the steady system on mean-zero fields.

    Each direction solves ``J d = -G`` by GMRES, right-preconditioned with
    the exact mean-zero inverse Laplacian.  The largest damping factor in
    ``1, 1/2, 1/4, ...`` that lowers ``||G||_L2`` is taken.
    """
    ctl = ctl or NewtonControl()
    grid = state.grid
    u = state.array()
    G = _residual_array(u, prob)
    g_l2, g_inf = _norms(G, grid)
    result = NewtonResult(state, 0, [g_inf], [g_l2])

    for it in range(1, ctl.max_iters + 1):
        if g_inf < ctl.tol_Linf:
            break
        d = _solve_direction(u, G, prob, ctl)
        means = _means(d, grid)
        result.direction_means.append(float(np.abs(means).max()))
        d -= means.reshape((-1,) + (1,) * grid.dim)

        s = 1.0
        while True:
            trial = u + s * d
            try:
                G_trial = _residual_array(trial, prob)
                t_l2, t_inf = _norms(G_trial, grid)
            except ZeroMass:
                t_l2 = np.inf
            if t_l2 < g_l2:
                break
            s *= 0.5
            if s < ctl.damping_floor:
                raise NoDescent(
                    f"no residual decrease down to damping {ctl.damping_floor:g} "
                    f"(iteration {it}, residual {g_inf:.3e})", history=result.history)
        u, G, g_l2, g_inf = trial, G_trial, t_l2, t_inf
        result.iterations = it
        result.history.append(g_inf)
        result.history_L2.append(g_l2)
        result.dampings.append(s)

    result.state = FlowState(state.t, _stack_fields(grid, u))
    return result


def certify(state: FlowState, prob: ProblemData, tol: float, factor: int = 2) -> dict:
    """Check the steady residual at the state's resolution and on a finer grid.

    The fine-grid check interpolates ``u`` spectrally and re-samples ``h``;
    a spurious root locked to the coarse grid shows up there.
    """
    coarse = residual(state, prob)
    fine_grid = Grid(state.grid.N * factor, state.grid.dim)
    fine_state = FlowState(state.t, tuple(upsample(ui, factor) for ui in state.u))
    fine = residual(fine_state, prob.on_grid(fine_grid))
    l2 = [coarse.L2, fine.L2]
    linf = [coarse.Linf, fine.Linf]
    passes = [bool(v < tol) for v in linf]
    return {
        "resolutions": [state.grid.N, fine_grid.N],
        "residual_l2": l2,
        "residual_linf": linf,
        "mean_defects": [abs(m) for m in state.means()],
        "tol": tol,
        "pass_by_resolution": passes,
        "pass": all(passes),
    }
