"""The standard suite of flow configurations used for acceptance runs."""

from __future__ import annotations

import itertools

H_SPECS = {
    "const": "const 1",
    "half_cos": "1 + 0.5*cos(2 pi x)",
    "touching": "1 + 1.0*cos(2 pi x)",
    "bump": {"gaussian": {"sigma": 0.1, "center": [0.3], "floor": 0.0}},
}
MATRICES = {"identity2": ("identity", 2), "cartan2": ("cartan", 2), "cartan3": ("cartan", 3)}
AMPLITUDES = (0.0, 0.5, 1.0)


def initial_specs(n: int, amplitude: float) -> list[str]:
    if amplitude == 0.0:
        return ["zero"] * n
    # distinct modes per component so the coupling is exercised
    return [f"{amplitude}*cos(2 pi {i + 1} x) - {amplitude / 2}*sin(2 pi x)" for i in range(n)]


def standard_suite(N: int = 128, t_end: float = 2.0, **step) -> dict[str, dict]:
    """Raw configs keyed by name; skips the stationary combination (h const, u0 zero)."""
    suite = {}
    for (mname, (mspec, n)), (hname, h), amp in itertools.product(
            MATRICES.items(), H_SPECS.items(), AMPLITUDES):
        if hname == "const" and amp == 0.0:
            continue
        suite[f"{mname}-{hname}-a{amp:g}"] = {
            "dim": 1, "N": N, "n": n, "matrix": mspec,
            "h": [h], "u0": initial_specs(n, amp),
            "step": {"t_end": t_end, **step},
        }
    return suite
