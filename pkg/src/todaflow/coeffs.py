"""Coupling matrices: construction, admissibility gate, spectral data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AsymmetricMatrix, EigenvalueTooLarge, LambdaTooSmall, NotPositiveDefinite

EIGEN_CEILING = 8.0 * np.pi
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """An admissible coupling matrix ``A`` together with ``A^-1`` and its spectrum.

    ``lam`` and ``Lam`` are the extremal eigenvalues of ``A^-1`` and ``beta``
    the Moser-Trudinger exponent chosen from ``lam``.
    """

    a: np.ndarray
    inverse: np.ndarray
    eig_min: float
    eig_max: float
    lam: float
    Lam: float
    beta: float

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def gradient_bound_factor(self) -> float:
        """``2 / (lam - 1/(2 beta))``, the prefactor of the gradient-energy bound."""
        return 2.0 / (self.lam - 1.0 / (2.0 * self.beta))


def cartan(n: int) -> np.ndarray:
    """Cartan matrix of type A_n: 2 on the diagonal, -1 beside it."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)


def choose_beta(lam: float) -> float:
    """Pick ``beta`` so ``1/(2 beta)`` sits midway between ``1/(8 pi)`` and ``lam``."""
    floor = 1.0 / EIGEN_CEILING
    if not lam > floor:
        raise LambdaTooSmall(f"lambda = {lam!r} must exceed 1/(8*pi) = {floor!r}")
    half_inv_beta = 0.5 * (floor + lam)
    return 1.0 / (2.0 * half_inv_beta)


def validate(raw) -> CoefficientMatrix:
    a = np.array(raw, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"coupling matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("coupling matrix has non-finite entries")

    scale = np.abs(a).max()
    asym = np.abs(a - a.T).max()
    if asym > SYMMETRY_RTOL * scale:
        raise AsymmetricMatrix(
            f"{AsymmetricMatrix.clause}: max |a_ij - a_ji| = {asym:.3e}")
    a = 0.5 * (a + a.T)

    eigs = scipy.linalg.eigh(a, eigvals_only=True)
    eig_min, eig_max = float(eigs[0]), float(eigs[-1])
    if eig_min <= 0.0:
        raise NotPositiveDefinite(
            f"{NotPositiveDefinite.clause}: smallest eigenvalue {eig_min!r}")
    if eig_max >= EIGEN_CEILING:
        raise EigenvalueTooLarge(
            f"{EigenvalueTooLarge.clause}: largest eigenvalue {eig_max!r}")

    factor = scipy.linalg.cho_factor(a, lower=True)
    inverse = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]))
    inverse = 0.5 * (inverse + inverse.T)

    lam = 1.0 / eig_max
    a.flags.writeable = False
    inverse.flags.writeable = False
    return CoefficientMatrix(
        a=a,
        inverse=inverse,
        eig_min=eig_min,
        eig_max=eig_max,
        lam=lam,
        Lam=1.0 / eig_min,
        beta=choose_beta(lam),
    )
