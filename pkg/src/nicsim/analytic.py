"""Scalability model for the NIC-based dissemination barrier.

    latency(n) = t_init + (ceil(log2 n) - 1) * t_trig + t_adj

``t_init`` is the two-node latency, ``t_trig`` the cost of each further
triggered message and ``t_adj`` a platform adjustment (it may be negative).
All values are microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .schedules import ceil_log

_BUILTIN = {
    "myrinet-lanai-xp": (3.60, 3.50, 3.84),
    "quadrics-elan3": (2.25, 2.32, -1.00),
}


@dataclass(frozen=True)
class ModelParams:
    t_init: float
    t_trig: float
    t_adj: float
    label: str = ""

    def __post_init__(self):
        if self.t_init < 0 or self.t_trig < 0:
            raise ValueError(f"t_init and t_trig must be >= 0, got {self.t_init}, {self.t_trig}")

    def as_dict(self) -> dict:
        return {"label": self.label, "t_init": self.t_init, "t_trig": self.t_trig, "t_adj": self.t_adj}


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    intercept: float  # t_init + t_adj
    residuals: tuple[float, ...]

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)

    def as_dict(self) -> dict:
        d = self.params.as_dict()
        d["intercept"] = self.intercept
        d["max_abs_residual"] = self.max_abs_residual
        return d


def round_half_up(x: float, places: int = 2) -> Decimal:
    q = Decimal(1).scaleb(-places)
    return Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP)


def predict_latency(p: ModelParams, n: int) -> float:
    if n < 2:
        raise ValueError(f"the model is defined for n >= 2, got {n}")
    return p.t_init + (ceil_log(n, 2) - 1) * p.t_trig + p.t_adj


def builtin_params(platform: str) -> ModelParams:
    try:
        t_init, t_trig, t_adj = _BUILTIN[platform]
    except KeyError:
        raise ValueError(
            f"no published model constants for {platform!r}; known: {', '.join(sorted(_BUILTIN))}"
        ) from None
    return ModelParams(t_init, t_trig, t_adj, label=platform)


def fit_constants(samples, label: str = "fit") -> FitResult:
    """Least-squares fit of the model to ``(n, latency_us)`` samples.

    The fit determines the intercept ``t_init + t_adj`` and the slope
    ``t_trig``.  By convention ``t_init`` is the mean measured latency at
    n = 2 when such samples exist, otherwise the whole intercept, and
    ``t_adj`` takes the remainder.
    """
    samples = [(int(n), float(lat)) for n, lat in samples]
    if len(samples) < 3:
        raise ValueError("need at least 3 samples")
    if any(n < 2 for n, _ in samples):
        raise ValueError("samples must have n >= 2")
    steps = np.array([ceil_log(n, 2) - 1 for n, _ in samples], dtype=float)
    if len(set(steps.tolist())) < 2:
        raise ValueError("samples need at least two distinct values of ceil(log2 n); the fit is rank-deficient")
    y = np.array([lat for _, lat in samples])
    design = np.column_stack([np.ones_like(steps), steps])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    a, b = float(a), float(b)
    eps = 1e-9 * max(1.0, float(np.abs(y).max()))
    a, b = (0.0 if abs(v) < eps else v for v in (a, b))  # lstsq noise around zero
    if b < 0:
        raise ValueError(f"fitted t_trig is negative ({b:.4g}): latency falls with n in these samples")
    two = [lat for n, lat in samples if n == 2]
    t_init = sum(two) / len(two) if two else a
    t_adj = a - t_init
    params = ModelParams(t_init=t_init, t_trig=b, t_adj=0.0 if abs(t_adj) < eps else t_adj, label=label)
    residuals = tuple(float(r) for r in y - design @ np.array([a, b]))
    return FitResult(params, a, residuals)
