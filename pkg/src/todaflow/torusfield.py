"""Periodic scalar fields on the flat unit-area torus.

Fields are sampled on a uniform grid of ``N`` points per axis over
``[0, 1)^dim``.  Derivatives are spectral (real FFT), integrals are the
rectangle rule with weight ``N**-dim``, which is spectrally accurate for
smooth periodic integrands.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .errors import GridMismatch, NonNegativityViolated, ZeroMass

TWO_PI = 2.0 * np.pi
_EPS = np.finfo(float).eps


def psum(a: np.ndarray) -> float:
    # numpy reduces contiguous float arrays pairwise in a fixed order
    return float(np.sum(np.ascontiguousarray(a).ravel()))


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the unit torus ``[0, 1)^dim``."""

    N: int
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.N < 2 or self.N % 2:
            raise ValueError(f"N must be a positive even integer, got {self.N}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def cell_weight(self) -> float:
        return float(self.N) ** -self.dim

    def coords(self) -> tuple[np.ndarray, ...]:
        """Grid coordinates, ``indexing='ij'`` (axis 0 is x)."""
        x = np.arange(self.N) / self.N
        if self.dim == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers broadcast to the rfftn half-spectrum layout."""
        full = np.fft.fftfreq(self.N, d=1.0 / self.N)
        half = np.fft.rfftfreq(self.N, d=1.0 / self.N)
        if self.dim == 1:
            return (half,)
        return (full[:, None], half[None, :])

    @cached_property
    def symbol(self) -> np.ndarray:
        """``4 pi^2 |k|^2`` on the half spectrum; minus the Laplacian symbol."""
        k2 = sum(k**2 for k in self.wavenumbers)
        return np.broadcast_to(TWO_PI**2 * k2, self.spectral_shape).copy()

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @cached_property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.N // 2 + 1,)

    @cached_property
    def parseval_weight(self) -> np.ndarray:
        # each interior half-spectrum column stands for itself and its conjugate
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return w / float(self.size) ** 2

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def constant(self, c: float) -> "ScalarField":
        return ScalarField(self, np.full(self.shape, float(c)))

    def zeros(self) -> "ScalarField":
        return self.constant(0.0)

    def sample(self, func: Callable[..., np.ndarray]) -> "ScalarField":
        """Evaluate ``func(x)`` (1-D) or ``func(x, y)`` (2-D) on the grid."""
        values = np.broadcast_to(np.asarray(func(*self.coords()), dtype=float), self.shape)
        return ScalarField(self, values)


class ScalarField:
    """A finite real field sampled on a :class:`Grid`. Treated as immutable."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=np.float64).reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("ScalarField values must be finite")
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr

    def __repr__(self):
        return f"ScalarField(N={self.grid.N}, dim={self.grid.dim})"

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


def _check_same_grid(f: ScalarField, g: ScalarField) -> None:
    if f.grid != g.grid:
        raise GridMismatch(f"grid mismatch: {f.grid} vs {g.grid}")


def mean(f: ScalarField) -> float:
    """Integral of ``f`` over the unit torus (rectangle rule)."""
    return f.grid.cell_weight * psum(f.values)


def project_mean_zero(f: ScalarField) -> ScalarField:
    """``f - mean(f)``; a mean already at the summation's roundoff level is left alone.

    The roundoff cutoff makes the projection idempotent bit for bit.
    """
    m = mean(f)
    if abs(m) <= _EPS * np.log2(f.grid.size + 1) * mean_abs(f):
        return f
    return ScalarField(f.grid, f.values - m)


def mean_abs(f: ScalarField) -> float:
    return f.grid.cell_weight * psum(np.abs(f.values))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(mean(f * f)))


def linf_norm(f: ScalarField) -> float:
    return float(np.abs(f.values).max())


def laplacian(f: ScalarField) -> ScalarField:
    grid = f.grid
    fh = np.fft.rfftn(f.values)
    return ScalarField(grid, np.fft.irfftn(-grid.symbol * fh, s=grid.shape, axes=grid.axes))


def gradient(f: ScalarField) -> tuple[ScalarField, ...]:
    """Spectral partial derivatives; the Nyquist mode is dropped."""
    grid = f.grid
    fh = np.fft.rfftn(f.values)
    parts = []
    for axis, k in enumerate(grid.wavenumbers):
        k = np.where(np.abs(k) == grid.N // 2, 0.0, k)
        d = np.fft.irfftn(1j * TWO_PI * k * fh, s=grid.shape, axes=grid.axes)
        parts.append(ScalarField(grid, d))
    return tuple(parts)


def _spectral_pairing(fh: np.ndarray, gh: np.ndarray, grid: Grid) -> float:
    integrand = grid.parseval_weight * grid.symbol * (fh.real * gh.real + fh.imag * gh.imag)
    return psum(integrand)


def dirichlet_pairing(f: ScalarField, g: ScalarField) -> float:
    """``int grad f . grad g`` via Parseval."""
    _check_same_grid(f, g)
    return _spectral_pairing(np.fft.rfftn(f.values), np.fft.rfftn(g.values), f.grid)


def grad_norm_sq(f: ScalarField) -> float:
    fh = np.fft.rfftn(f.values)
    return _spectral_pairing(fh, fh, f.grid)


def dirichlet_matrix(fields) -> np.ndarray:
    """All pairings ``int grad f_i . grad f_j`` at the cost of one FFT per field."""
    fields = list(fields)
    grid = fields[0].grid
    for g in fields[1:]:
        _check_same_grid(fields[0], g)
    hats = [np.fft.rfftn(f.values) for f in fields]
    n = len(hats)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = _spectral_pairing(hats[i], hats[j], grid)
    return out


class ExpIntegral(NamedTuple):
    value: float
    log: float


def exp_integral(f: ScalarField, h: ScalarField | None = None, p: float = 1.0) -> ExpIntegral:
    """Overflow-safe ``int h exp(p f)``, returned with its logarithm.

    The exponent is shifted by its maximum over the support of ``h`` so
    that the largest sampled term is ``h`` itself; the logarithm is formed
    from the shifted mean and never from the (possibly overflowing) value.
    """
    grid = f.grid
    if h is None:
        hv = np.ones(grid.shape)
    else:
        _check_same_grid(f, h)
        hv = h.values
        if hv.min() < -1e-14:
            raise NonNegativityViolated(f"coefficient function has minimum {hv.min():.3e} < 0")
        hv = np.maximum(hv, 0.0)
    support = hv > 0
    if not support.any():
        return ExpIntegral(0.0, -np.inf)
    expo = p * f.values
    shift = float(expo[support].max())
    scaled = grid.cell_weight * psum(hv * np.exp(expo - shift))
    if not scaled > 0.0:
        raise ZeroMass("exponential integral underflowed to zero")
    log_value = shift + float(np.log(scaled))
    with np.errstate(over="ignore"):
        value = float(np.exp(log_value))
    return ExpIntegral(value, log_value)


def upsample(f: ScalarField, factor: int = 2) -> ScalarField:
    """Band-limited interpolation onto a grid ``factor`` times finer per axis.

    The Nyquist coefficient is split evenly between ``+N/2`` and ``-N/2`` so
    the interpolant is real and reproduces ``f`` at the coarse nodes.
    """
    values = f.values
    N, M = f.grid.N, f.grid.N * factor
    for axis in range(f.grid.dim):
        c = np.fft.fft(values, axis=axis)
        c = np.moveaxis(c, axis, 0)
        out = np.zeros((M,) + c.shape[1:], dtype=complex)
        half = N // 2
        out[:half] = c[:half]
        out[M - half + 1:] = c[half + 1:]
        out[half] = 0.5 * c[half]
        out[M - half] = 0.5 * c[half]
        out = np.moveaxis(out, 0, axis)
        values = np.fft.ifft(out, axis=axis).real * factor
    return ScalarField(Grid(M, f.grid.dim), values)


def restrict(f: ScalarField, factor: int = 2) -> ScalarField:
    """Inject a fine-grid field onto every ``factor``-th node."""
    sl = (slice(None, None, factor),) * f.grid.dim
    return ScalarField(Grid(f.grid.N // factor, f.grid.dim), f.values[sl])


# -- snapshots ---------------------------------------------------------------
# Binary layout (little endian): int64 dim, int64 N, int64 count, then
# ``count`` fields of N**dim float64 values each, row-major (x slowest).

_HEADER = np.dtype("<i8")
_VALUES = np.dtype("<f8")


def write_snapshot(path, fields) -> None:
    fields = list(fields)
    grid = fields[0].grid
    for g in fields[1:]:
        _check_same_grid(fields[0], g)
    with open(path, "wb") as fh:
        fh.write(np.array([grid.dim, grid.N, len(fields)], dtype=_HEADER).tobytes())
        for f in fields:
            fh.write(np.ascontiguousarray(f.values, dtype=_VALUES).tobytes())


def read_snapshot(path) -> list[ScalarField]:
    raw = open(path, "rb").read()
    dim, N, count = (int(v) for v in np.frombuffer(raw[:24], dtype=_HEADER))
    grid = Grid(N, dim)
    data = np.frombuffer(raw[24:], dtype=_VALUES)
    if data.size != count * grid.size:
        raise ValueError(f"snapshot {path}: expected {count * grid.size} values, found {data.size}")
    return [ScalarField(grid, chunk) for chunk in data.reshape(count, *grid.shape)]


def write_snapshot_csv(path, fields) -> None:
    """Text twin of :func:`write_snapshot`: header line, then one grid row per line."""
    fields = list(fields)
    grid = fields[0].grid
    with open(path, "w") as fh:
        fh.write(f"# dim={grid.dim} N={grid.N} count={len(fields)}\n")
        for f in fields:
            rows = f.values.reshape(1, -1) if grid.dim == 1 else f.values
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_snapshot_csv(path) -> list[ScalarField]:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=") for item in header)
        dim, N, count = int(meta["dim"]), int(meta["N"]), int(meta["count"])
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = Grid(N, dim)
    return [ScalarField(grid, chunk) for chunk in data.reshape(count, *grid.shape)]
