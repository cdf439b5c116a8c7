"""Run configuration, orchestration and persistence.

A run configuration is a JSON object::

    {
      "dim": 1, "N": 128, "n": 2,
      "matrix": "cartan",
      "h": ["1 + 0.5*cos(2 pi x)"],
      "u0": ["0.1*sin(2 pi x)"],
      "q": 2.0,
      "step": {"tau0": 1e-3, "t_end": 20.0},
      "newton": {"tol_Linf": 1e-11},
      "certify_tol": 1e-9,
      "output": "runs/toda2"
    }

``matrix`` is ``"identity"``, ``"cartan"``, explicit row-major entries, or
``{"base": <any of those>, "scale": c}``.  ``h`` and ``u0`` lists of length
one are broadcast to all ``n`` components.

Coefficient functions come from a closed family so that nonnegativity is
checkable on the grid:

* ``"const c"``
* ``"1 + a*cos(2 pi k x)"`` (``y`` in 2-D; ``k`` optional)
* ``{"gaussian": {"sigma": s, "center": [..], "floor": f}}``
* ``{"product": [spec, spec, ...]}``

Initial data are ``"zero"`` or sums of at most eight modes
``"a*cos(2 pi k x)"`` / ``"a*sin(2 pi k y)"``, or
``{"modes": [{"kind": "cos", "amplitude": a, "k": [kx, ky]}, ...]}``.
They are projected to mean zero after sampling.  New expression kinds go in
:func:`coefficient_function` and :func:`initial_function`.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import coeffs
from .errors import (
    ConfigError,
    MatrixError,
    NonFinite,
    NonNegativityViolated,
    NoDescent,
    ParseError,
    SingularLinearization,
    StepFloor,
    ValidationError,
    ZeroMass,
)
from .flow import StepControl, TrajectoryRecord, evolve
from .functionals import FlowState, ProblemData
from .steady import NewtonControl, certify, newton_refine
from .torusfield import Grid, project_mean_zero, read_snapshot, write_snapshot

log = logging.getLogger(__name__)

CSV_VERSION = "todaflow-trajectory v1"
EXIT_OK, EXIT_INCOMPLETE, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2, 3
MAX_MODES = 8

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_ARG = r"\(\s*2\s*\*?\s*pi\s*\*?\s*(?:(?P<k>\d+)\s*\*?\s*)?(?P<var>[xy])\s*\)"
_CONST_RE = re.compile(rf"^\s*(?:const\s+)?(?P<c>{_NUM})\s*$")
_COS_RE = re.compile(rf"^\s*1\s*(?P<sign>[-+])\s*(?P<a>{_NUM})\s*\*?\s*cos\s*{_ARG}\s*$")
_MODE_RE = re.compile(rf"\s*(?P<sign>[-+]?)\s*(?P<a>{_NUM})\s*\*?\s*(?P<kind>cos|sin)\s*{_ARG}\s*")


@dataclass
class RunConfig:
    dim: int
    N: int
    n: int
    grid: Grid
    matrix: coeffs.CoefficientMatrix
    problem: ProblemData
    u0: FlowState
    step: StepControl
    newton: NewtonControl
    certify_tol: float = 1e-9
    output: Path = Path("runs/default")
    seed: int = 0
    name: str = "run"
    raw: dict = field(default_factory=dict)


# -- expression family -------------------------------------------------------

def _wave(k: int | list, var: str, dim: int) -> np.ndarray:
    if isinstance(k, (list, tuple)):
        vec = [float(v) for v in k] + [0.0] * (dim - len(k))
    else:
        vec = [0.0] * dim
        vec["xy".index(var)] = float(k)
    if len(vec) != dim:
        raise ValueError(f"wave vector {k} does not match dim={dim}")
    return np.array(vec)


def _phase(wave: np.ndarray) -> Callable:
    def phase(*xs):
        return 2.0 * np.pi * sum(kv * x for kv, x in zip(wave, xs))
    return phase


def coefficient_function(spec, dim: int) -> Callable:
    """Turn one coefficient-function spec into a callable of the grid coordinates."""
    if isinstance(spec, (int, float)):
        spec = f"const {spec}"
    if isinstance(spec, str):
        if m := _CONST_RE.match(spec):
            c = float(m["c"])
            return lambda *xs: np.full(np.shape(xs[0]), c)
        if m := _COS_RE.match(spec):
            a = float(m["a"]) * (-1.0 if m["sign"] == "-" else 1.0)
            phase = _phase(_wave(int(m["k"] or 1), m["var"], dim))
            return lambda *xs: 1.0 + a * np.cos(phase(*xs))
        raise ValueError(f"unrecognised coefficient expression {spec!r}")
    if isinstance(spec, dict) and "gaussian" in spec:
        g = spec["gaussian"]
        sigma = float(g["sigma"])
        center = np.broadcast_to(np.asarray(g.get("center", 0.5), dtype=float), (dim,))
        floor = float(g.get("floor", 0.0))
        if not sigma > 0.0 or floor < 0.0:
            raise ValueError("gaussian bump needs sigma > 0 and floor >= 0")

        def bump(*xs):
            r2 = 0.0
            for x, c in zip(xs, center):
                d = x - c
                # nearest images only; farther ones are below exp(-1/(2 sigma^2))
                r2 = r2 + np.minimum.reduce([(d + s) ** 2 for s in (-1.0, 0.0, 1.0)])
            return floor + np.exp(-r2 / (2.0 * sigma**2))
        return bump
    if isinstance(spec, dict) and "product" in spec:
        parts = [coefficient_function(s, dim) for s in spec["product"]]
        if not parts:
            raise ValueError("empty product")

        def product(*xs):
            out = parts[0](*xs)
            for p in parts[1:]:
                out = out * p(*xs)
            return out
        return product
    raise ValueError(f"unrecognised coefficient spec {spec!r}")


def initial_function(spec, dim: int) -> Callable:
    modes = []
    if isinstance(spec, str):
        text = spec.strip()
        if text in ("zero", "0"):
            return lambda *xs: np.zeros(np.shape(xs[0]))
        pos = 0
        for m in _MODE_RE.finditer(text):
            if m.start() != pos or (pos > 0 and not m["sign"]):
                raise ValueError(f"cannot parse initial data {spec!r}")
            a = float(m["a"]) * (-1.0 if m["sign"] == "-" else 1.0)
            modes.append((m["kind"], a, _wave(int(m["k"] or 1), m["var"], dim)))
            pos = m.end()
        if pos != len(text) or not modes:
            raise ValueError(f"cannot parse initial data {spec!r}")
    elif isinstance(spec, dict) and "modes" in spec:
        for mode in spec["modes"]:
            kind = mode.get("kind", "cos")
            if kind not in ("cos", "sin"):
                raise ValueError(f"mode kind must be cos or sin, got {kind!r}")
            modes.append((kind, float(mode["amplitude"]), _wave(mode.get("k", 1), "x", dim)))
    else:
        raise ValueError(f"unrecognised initial data spec {spec!r}")
    if len(modes) > MAX_MODES:
        raise ValueError(f"at most {MAX_MODES} modes per component, got {len(modes)}")

    def u0(*xs):
        out = np.zeros(np.shape(xs[0]))
        for kind, a, wave in modes:
            trig = np.cos if kind == "cos" else np.sin
            out = out + a * trig(_phase(wave)(*xs))
        return out
    return u0


def matrix_from_spec(spec, n: int) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "identity":
            return np.eye(n)
        if spec == "cartan":
            return coeffs.cartan(n)
        raise ValueError(f"unknown matrix name {spec!r}")
    if isinstance(spec, dict):
        if "entries" in spec:
            return matrix_from_spec(spec["entries"], n)
        base = matrix_from_spec(spec.get("base", "identity"), n)
        return float(spec.get("scale", 1.0)) * base
    a = np.array(spec, dtype=float)
    if a.ndim == 1 and a.size == n * n:
        a = a.reshape(n, n)
    if a.shape != (n, n):
        raise ValueError(f"matrix entries have shape {a.shape}, expected {(n, n)}")
    return a


# -- loading -----------------------------------------------------------------

def _set_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ParseError(f"override {text!r} is not key=value")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def _broadcast(specs, n: int, name: str) -> list:
    if not isinstance(specs, list):
        specs = [specs]
    if len(specs) == 1:
        specs = specs * n
    if len(specs) != n:
        raise ValidationError(name, f"expected 1 or {n} entries, got {len(specs)}")
    return specs


def _dataclass_from(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(name, f"unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(name, str(exc)) from exc


def config_from_dict(raw: dict, name: str = "run") -> RunConfig:
    """Validate a raw configuration mapping and precompute derived quantities."""
    raw = copy.deepcopy(raw)
    try:
        dim, N, n = int(raw.get("dim", 1)), int(raw["N"]), int(raw["n"])
    except KeyError as exc:
        raise ValidationError(exc.args[0], "missing required key") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError("dim/N/n", str(exc)) from exc
    if n < 1:
        raise ValidationError("n", "must be >= 1")
    try:
        grid = Grid(N, dim)
    except ValueError as exc:
        raise ValidationError("N" if "N must" in str(exc) else "dim", str(exc)) from exc

    try:
        matrix = coeffs.validate(matrix_from_spec(raw.get("matrix", "identity"), n))
    except MatrixError as exc:
        raise ValidationError(
            "matrix", f"{type(exc).__name__}: {exc} (admissibility of A violated)") from exc
    except ValueError as exc:
        raise ValidationError("matrix", str(exc)) from exc

    h_funcs, h_fields = [], []
    for j, spec in enumerate(_broadcast(raw.get("h", ["const 1"]), n, "h")):
        try:
            fn = coefficient_function(spec, dim)
            hj = grid.sample(fn)
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"h[{j}]", str(exc)) from exc
        if hj.min() < -1e-14:
            raise ValidationError(f"h[{j}]", f"negativity on the grid: minimum {hj.min():.6g} < 0")
        h_funcs.append(fn)
        h_fields.append(hj)
    try:
        problem = ProblemData(matrix, tuple(h_fields), float(raw.get("q", 2.0)), tuple(h_funcs))
    except NonNegativityViolated as exc:
        raise ValidationError("h", str(exc)) from exc

    u_fields = []
    for i, spec in enumerate(_broadcast(raw.get("u0", ["zero"]), n, "u0")):
        try:
            u_fields.append(project_mean_zero(grid.sample(initial_function(spec, dim))))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"u0[{i}]", str(exc)) from exc
    u0 = FlowState(0.0, tuple(u_fields))

    return RunConfig(
        dim=dim, N=N, n=n, grid=grid, matrix=matrix, problem=problem, u0=u0,
        step=_dataclass_from(StepControl, raw.get("step", {}), "step"),
        newton=_dataclass_from(NewtonControl, raw.get("newton", {}), "newton"),
        certify_tol=float(raw.get("certify_tol", 1e-9)),
        output=Path(raw.get("output", f"runs/{name}")),
        seed=int(raw.get("seed", 0)),
        name=name,
        raw=raw,
    )


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(raw, key, value)
    return config_from_dict(raw, name=path.stem)


# -- persistence -------------------------------------------------------------

def write_trajectory_csv(path, rec: TrajectoryRecord) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_VERSION}: {','.join(rec.columns())}\n")
        writer = csv.writer(fh)
        for row in rec.rows():
            writer.writerow([f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith(f"# {CSV_VERSION}:"):
            raise ParseError(f"{path}: unsupported trajectory header {header.strip()!r}")
        names = header.split(":", 1)[1].strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, k] for k, name in enumerate(names)}


def entropy_series_monotone(K: np.ndarray, slack: float) -> bool:
    return bool(np.all(np.diff(K) <= slack))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default, allow_nan=True) + "\n")


# -- running -----------------------------------------------------------------

def refine_and_certify(state: FlowState, cfg: RunConfig) -> tuple[dict, FlowState | None]:
    block: dict[str, Any] = {"flow_limit": certify(state, cfg.problem, cfg.certify_tol)}
    try:
        result = newton_refine(state, cfg.problem, cfg.newton)
    except (SingularLinearization, NoDescent, ZeroMass) as exc:
        block["newton"] = {"error": type(exc).__name__, "message": str(exc),
                           "history": getattr(exc, "history", [])}
        block["pass"] = False
        return block, None
    moved = float(np.abs(result.state.array() - state.array()).max())
    block["newton"] = {
        "iterations": result.iterations,
        "history": result.history,
        "direction_mean_max": max(result.direction_means, default=0.0),
        "flow_distance_linf": moved,
        "agrees_with_flow": moved <= 10.0 * cfg.step.steady_tol,
    }
    block["refined"] = certify(result.state, cfg.problem, cfg.certify_tol)
    block["pass"] = block["refined"]["pass"]
    return block, result.state


def run(cfg: RunConfig, out: Path | None = None) -> int:
    """Evolve, refine and certify one configuration; write all artifacts to ``out``."""
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.raw)
    report: dict[str, Any] = {"name": cfg.name}
    try:
        state, rec = evolve(cfg.u0, cfg.problem, cfg.step)
    except (StepFloor, NonFinite, ZeroMass) as exc:
        report.update(termination="failure", error=type(exc).__name__, message=str(exc))
        snap = getattr(exc, "state", None)
        if snap is not None:
            write_snapshot(out / "failure_state.bin", snap.u)
        write_json(out / "report.json", report)
        log.error("%s: %s", cfg.name, exc)
        return EXIT_FAILURE

    csv_path = out / "trajectory.csv"
    write_trajectory_csv(csv_path, rec)
    write_snapshot(out / "final.bin", state.u)
    series = read_trajectory_csv(csv_path)
    taus = rec.accepted_taus()
    report.update(
        termination=rec.termination,
        t_final=state.t,
        steps=len(rec) - 1,
        K0=rec.K[0],
        K_final=rec.K[-1],
        entropy_drop=rec.K[0] - rec.K[-1],
        min_step=float(taus.min()) if taus.size else None,
        max_step=float(taus.max()) if taus.size else None,
        rejections=rec.rejections,
        max_mean_defect=float(np.abs(np.array(rec.means)).max()),
        max_sup_norm=float(np.max(rec.sup_norms)),
        mt_deficit_max=float(np.max(rec.mt_deficit_max)),
        min_entropy_gap=float(np.min(rec.entropy_gap)),
        entropy_monotone=entropy_series_monotone(series["K"], cfg.step.entropy_slack),
        residual_linf_final=rec.residual_Linf[-1],
    )
    if rec.termination == "steady":
        block, refined = refine_and_certify(state, cfg)
        report["certification"] = block
        if refined is not None:
            write_snapshot(out / "refined.bin", refined.u)
    write_json(out / "report.json", report)
    log.info("%s: %s, K %.6g -> %.6g", cfg.name, rec.termination, rec.K[0], rec.K[-1])
    return EXIT_OK if rec.termination in ("steady", "t_end") else EXIT_INCOMPLETE


def certify_snapshot(snapshot, cfg: RunConfig) -> dict:
    fields_ = read_snapshot(snapshot)
    if fields_[0].grid != cfg.grid or len(fields_) != cfg.n:
        raise ValidationError("snapshot", f"{len(fields_)} fields on {fields_[0].grid} "
                              f"do not match n={cfg.n} on {cfg.grid}")
    return certify(FlowState(0.0, tuple(fields_)), cfg.problem, cfg.certify_tol)


def error_report(exc: Exception) -> dict:
    kind = "ConfigError" if isinstance(exc, ConfigError) else type(exc).__name__
    return {"error": type(exc).__name__, "category": kind, "message": str(exc),
            "field": getattr(exc, "field", None)}

