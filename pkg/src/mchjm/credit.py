"""Default intensities: square-root diffusion plus deterministic shift.

Each name carries ``lambda_t = y_t + psi(t)`` with
``dy = zeta (mu - y) dt + nu sqrt(y) dZ`` and a piecewise-constant shift
``psi`` fitted so that model survival probabilities reproduce a target
cumulative-hazard curve exactly at its pillars.  The fit is a closed-form
pillar-by-pillar difference, no iteration involved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CreditError(ValueError):
    """Invalid intensity parameters or an infeasible shift fit."""


@dataclass(frozen=True)
class CirParams:
    zeta: float
    mu: float
    nu: float
    y0: float

    def __post_init__(self):
        if self.zeta <= 0 or self.mu <= 0 or self.y0 < 0 or self.nu < 0:
            raise CreditError("need zeta > 0, mu > 0, nu >= 0, y0 >= 0")

    @property
    def feller_satisfied(self) -> bool:
        # reported, not enforced: the truncation scheme handles violations
        return 2.0 * self.zeta * self.mu >= self.nu**2


class ShiftFunction:
    """Piecewise-constant shift, right-continuous, flat beyond the last pillar."""

    def __init__(self, pillars: np.ndarray, values: np.ndarray):
        pillars = np.atleast_1d(np.asarray(pillars, float))
        values = np.atleast_1d(np.asarray(values, float))
        if pillars.shape != values.shape or pillars.ndim != 1 or pillars.size == 0:
            raise CreditError("shift pillars and values must be 1d and aligned")
        if pillars[0] <= 0 or np.any(np.diff(pillars) <= 0):
            raise CreditError("shift pillars must be positive and increasing")
        self.pillars = pillars
        self.values = values
        widths = np.diff(np.concatenate([[0.0], pillars]))
        self.cum = np.concatenate([[0.0], np.cumsum(widths * values)])

    @classmethod
    def zero(cls) -> "ShiftFunction":
        return cls(np.array([1.0]), np.array([0.0]))

    def value(self, t):
        t_arr = np.asarray(t, float)
        idx = np.minimum(
            np.searchsorted(self.pillars, t_arr, side="right"),
            self.pillars.size - 1,
        )
        out = self.values[idx]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def integral(self, t):
        """``int_0^t psi``, piecewise linear in ``t``."""
        t_arr = np.asarray(t, float)
        knots = np.concatenate([[0.0], self.pillars])
        idx = np.clip(np.searchsorted(knots, t_arr, side="right") - 1, 0, None)
        idx = np.minimum(idx, self.pillars.size - 1)
        out = self.cum[idx] + self.values[idx] * (t_arr - knots[idx])
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


@dataclass(frozen=True)
class CirPP:
    params: CirParams
    shift: ShiftFunction

    def intensity0(self) -> float:
        return self.params.y0 + self.shift.value(0.0)


# ----- closed-form survival -----


def cir_survival(params: CirParams, t) -> np.ndarray:
    """``E[exp(-int_0^t y)]`` for the unshifted square-root process.

    Uses the affine closed form; for vanishing ``nu`` it switches to the
    deterministic mean-path integral, which is the exact limit.
    """
    t_arr = np.asarray(t, float)
    z, m, n, y0 = params.zeta, params.mu, params.nu, params.y0
    if n < 1e-8:
        integ = m * t_arr + (y0 - m) * -np.expm1(-z * t_arr) / z
        out = np.exp(-integ)
    else:
        h = math.sqrt(z * z + 2.0 * n * n)
        em1 = np.expm1(h * t_arr)
        denom = 2.0 * h + (z + h) * em1
        b = 2.0 * em1 / denom
        log_a = (2.0 * z * m / (n * n)) * (
            math.log(2.0 * h) + 0.5 * (z + h) * t_arr - np.log(denom)
        )
        out = np.exp(log_a - b * y0)
    return float(out) if np.isscalar(t) else out


def survival_probability(curve: CirPP, t):
    """Model survival ``exp(-int psi) * E[exp(-int y)]``."""
    return np.exp(-curve.shift.integral(t)) * cir_survival(curve.params, t)


# ----- shift calibration -----


def calibrate_shift(params: CirParams, pillars, cum_hazards) -> ShiftFunction:
    """Fit the piecewise-constant shift to a cumulative-hazard curve.

    Exact at the pillars by construction.  A pillar whose fit would need a
    negative shift (which could push the intensity below zero when ``y``
    sits at its floor) is reported as an error.
    """
    pillars = np.atleast_1d(np.asarray(pillars, float))
    cum = np.atleast_1d(np.asarray(cum_hazards, float))
    if pillars.shape != cum.shape or pillars.size == 0:
        raise CreditError("hazard pillars and cumulative hazards must align")
    if pillars[0] <= 0 or np.any(np.diff(pillars) <= 0):
        raise CreditError("hazard pillars must be positive and increasing")
    log_s = np.log(cir_survival(params, pillars))
    knots = np.concatenate([[0.0], pillars])
    log_s = np.concatenate([[0.0], log_s])
    cum = np.concatenate([[0.0], cum])
    values = np.empty(pillars.size)
    for j in range(pillars.size):
        width = knots[j + 1] - knots[j]
        psi = ((cum[j + 1] - cum[j]) + (log_s[j + 1] - log_s[j])) / width
        if psi < -1e-12:
            raise CreditError(
                f"shift fit needs negative value at pillar {knots[j + 1]}"
            )
        values[j] = max(psi, 0.0)
    return ShiftFunction(pillars, values)


def fit_cirpp(params: CirParams, pillars, cum_hazards) -> CirPP:
    return CirPP(params, calibrate_shift(params, pillars, cum_hazards))


# ----- presets -----


def flat_hazard(level: float, horizon: float = 15.0, step: float = 1.0):
    pillars = np.arange(step, horizon + step / 2, step)
    return pillars, level * pillars


def medium_risk() -> CirPP:
    """Flat 200bp hazard with moderate intensity volatility."""
    params = CirParams(zeta=0.4, mu=0.02, nu=0.10, y0=0.02)
    return fit_cirpp(params, *flat_hazard(0.02))


def high_risk() -> CirPP:
    """Flat 400bp hazard with higher intensity volatility."""
    params = CirParams(zeta=0.4, mu=0.04, nu=0.14, y0=0.04)
    return fit_cirpp(params, *flat_hazard(0.04))


PRESETS = {"medium_risk": medium_risk, "high_risk": high_risk}


# ----- simulation step and cure-period intensities -----


def evolve_intensity(params: CirParams, y, dt: float, dz):
    """Full-truncation Euler step for the square-root part, floored at zero.

    Vectorised over ``y``/``dz``; drift and diffusion read ``max(y, 0)`` and
    the result is clipped so the shifted intensity stays nonnegative.
    """
    yp = np.maximum(y, 0.0)
    y_new = (
        y
        + params.zeta * (params.mu - yp) * dt
        + params.nu * np.sqrt(yp) * np.asarray(dz)
    )
    return np.maximum(y_new, 0.0)


def gap_intensity(lam_primary, lam_secondary, window_hazard_primary):
    """Cure-period effective intensity.

    ``lam_primary + lam_secondary * (1 - exp(-W))`` where ``W`` is the
    primary name's integrated intensity over the cure window.  Reduces to
    ``lam_primary`` when the window vanishes and always dominates it.
    """
    w = np.asarray(window_hazard_primary)
    if np.any(w < -1e-12):
        raise CreditError("negative integrated hazard over the cure window")
    return lam_primary + lam_secondary * -np.expm1(-np.maximum(w, 0.0))


def lambda_delta(lam_c, lam_i, window_hazard_c, window_hazard_i):
    """Window-adjusted loss intensities for both parties.

    Returns ``(counterparty, own)`` rates: each party's rate is its own
    intensity plus the other's intensity times its own window default
    probability.  Both reduce to the plain intensities for an empty window.
    """
    return (
        gap_intensity(lam_c, lam_i, window_hazard_c),
        gap_intensity(lam_i, lam_c, window_hazard_i),
    )


# ----- hazard curve input -----


def load_hazard_csv(path):
    """Read a ``maturity,cum_hazard`` file, sorted by maturity."""
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"maturity", "cum_hazard"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise CreditError(
                f"hazard file must have columns {sorted(expected)}, got {reader.fieldnames}"
            )
        for row in reader:
            rows.append((float(row["maturity"]), float(row["cum_hazard"])))
    rows.sort()
    if not rows:
        raise CreditError("empty hazard file")
    pillars = np.array([r[0] for r in rows])
    cum = np.array([r[1] for r in rows])
    return pillars, cum
