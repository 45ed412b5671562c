"""Initial term structures.

A :class:`DiscountCurve` holds the time-0 risk-free (overnight-collateral)
discount factors, interpolated linearly in log-discount so that instantaneous
forwards are piecewise constant and right-continuous at the pillars.  One
:class:`ForwardCurve` per accrual tenor holds the time-0 simply-compounded
forward rates, interpolated linearly in the rate.

Bootstraps take par quotes: overnight-indexed swaps for the discount curve
(floating leg valued by telescoping compounding factors) and fixed-vs-floating
swaps for each tenor curve, solved pillar by pillar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq


class CurveError(ValueError):
    """Malformed curve input or a failed bootstrap step."""


@dataclass(frozen=True)
class OisQuote:
    """Par rate of an overnight-indexed swap maturing at ``maturity``.

    Swaps no longer than ``pay_period`` exchange a single payment at maturity;
    longer swaps pay on a grid stepping back from maturity by ``pay_period``,
    with a possible short first period.
    """

    maturity: float
    rate: float
    pay_period: float = 1.0


@dataclass(frozen=True)
class IrsQuote:
    """Par rate of a fixed-vs-floating swap, both legs on the ``tenor`` grid."""

    tenor: float
    maturity: float
    rate: float


def _payment_dates(maturity: float, period: float) -> np.ndarray:
    dates = [maturity]
    while dates[-1] - period > 1e-9:
        dates.append(dates[-1] - period)
    return np.array(dates[::-1])


class DiscountCurve:
    """Log-linear discount curve anchored at ``P(0) = 1``.

    Evaluation beyond the last pillar continues the last segment's slope
    (flat-forward extrapolation); negative times are rejected.
    """

    def __init__(self, pillars: np.ndarray, log_discounts: np.ndarray):
        pillars = np.atleast_1d(np.asarray(pillars, dtype=float))
        log_discounts = np.atleast_1d(np.asarray(log_discounts, dtype=float))
        if pillars.shape != log_discounts.shape or pillars.ndim != 1:
            raise CurveError("pillars and log-discounts must be 1d and aligned")
        if pillars.size == 0:
            raise CurveError("need at least one pillar")
        if pillars[0] <= 0 or np.any(np.diff(pillars) <= 0):
            raise CurveError("pillars must be strictly increasing and positive")
        if not np.all(np.isfinite(log_discounts)):
            raise CurveError("non-finite log-discount")
        self.knots = np.concatenate([[0.0], pillars])
        self.log_values = np.concatenate([[0.0], log_discounts])
        self.slopes = np.diff(self.log_values) / np.diff(self.knots)

    @classmethod
    def flat(cls, rate: float, horizon: float = 60.0) -> "DiscountCurve":
        return cls(np.array([horizon]), np.array([-rate * horizon]))

    def _segment(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(idx, 0, len(self.slopes) - 1)

    def log_discount(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < -1e-12):
            raise CurveError("negative time in discount query")
        t_arr = np.maximum(t_arr, 0.0)
        idx = self._segment(t_arr)
        out = self.log_values[idx] + self.slopes[idx] * (t_arr - self.knots[idx])
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def discount(self, t):
        return np.exp(self.log_discount(t))

    def inst_forward(self, t):
        """Instantaneous forward, piecewise constant, right-continuous."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(
            np.searchsorted(self.knots, t_arr, side="right") - 1,
            0,
            len(self.slopes) - 1,
        )
        out = -self.slopes[idx]
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


class ForwardCurve:
    """Time-0 simply-compounded forwards for one accrual tenor.

    ``forward(T)`` returns the rate fixing at ``T - tenor`` for payment at
    ``T``; interpolation is linear in the rate with flat extrapolation.
    """

    def __init__(self, tenor: float, pillars: np.ndarray, values: np.ndarray):
        pillars = np.atleast_1d(np.asarray(pillars, dtype=float))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if tenor <= 0:
            raise CurveError("tenor must be positive")
        if pillars.shape != values.shape or pillars.ndim != 1:
            raise CurveError("pillars and values must be 1d and aligned")
        if pillars.size == 0:
            raise CurveError("need at least one pillar")
        if np.any(np.diff(pillars) <= 0):
            raise CurveError("pillars must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise CurveError("non-finite forward value")
        self.tenor = float(tenor)
        self.pillars = pillars
        self.values = values

    @classmethod
    def flat(cls, tenor: float, level: float) -> "ForwardCurve":
        return cls(tenor, np.array([tenor]), np.array([level]))

    def forward(self, t):
        out = np.interp(np.asarray(t, dtype=float), self.pillars, self.values)
        return float(out) if np.isscalar(t) else out


def par_ois_rate(dc: DiscountCurve, maturity: float, tenor: float) -> float:
    """One-period par rate implied by the discount curve."""
    return (dc.discount(maturity - tenor) / dc.discount(maturity) - 1.0) / tenor


def bootstrap_discount_curve(quotes) -> DiscountCurve:
    """Build the discount curve from OIS par quotes, pillar by pillar.

    The floating leg telescopes to ``1 - P(T)`` exactly, so each step solves
    ``K * sum(tau_i P(d_i)) = 1 - P(T)`` for the new pillar's log-discount with
    interior payment dates read off the partially built curve.
    """
    if not quotes:
        return DiscountCurve(np.array([50.0]), np.array([0.0]))
    quotes = sorted(quotes, key=lambda q: q.maturity)
    mats = [q.maturity for q in quotes]
    if any(b - a < 1e-9 for a, b in zip(mats, mats[1:])) or mats[0] <= 0:
        raise CurveError("quote maturities must be positive and strictly increasing")

    pillars: list[float] = []
    logs: list[float] = []
    for q in quotes:
        dates = _payment_dates(q.maturity, q.pay_period)
        taus = np.diff(np.concatenate([[0.0], dates]))

        def gap(lp: float) -> float:
            curve = DiscountCurve(
                np.array(pillars + [q.maturity]), np.array(logs + [lp])
            )
            disc = curve.discount(dates)
            return q.rate * float(np.sum(taus * disc)) - (1.0 - disc[-1])

        guess = logs[-1] if logs else 0.0
        width = max(0.05 * (q.maturity - (pillars[-1] if pillars else 0.0)), 0.01)
        lo, hi = guess - width, guess + width
        root = None
        for _ in range(40):
            try:
                if gap(lo) * gap(hi) <= 0:
                    root = brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16)
                    break
            except (FloatingPointError, OverflowError):
                pass
            lo, hi = guess - 2 * (guess - lo), guess + 2 * (hi - guess)
            if hi - lo > 400.0:
                break
        if root is None:
            raise CurveError(
                f"discount bootstrap singular at pillar {q.maturity}"
            )
        pillars.append(q.maturity)
        logs.append(root)
    return DiscountCurve(np.array(pillars), np.array(logs))


def bootstrap_forward_curve(tenor, dc: DiscountCurve, quotes) -> ForwardCurve:
    """Build a tenor forward curve from swap par quotes.

    The curve is linear in the forward rate between quote maturities; each
    bootstrap step is linear in the new pillar value and solved in closed form.
    """
    if not quotes:
        return ForwardCurve(tenor, np.array([tenor]), np.array([0.0]))
    quotes = sorted(quotes, key=lambda q: q.maturity)
    mats = [q.maturity for q in quotes]
    if any(b - a < 1e-9 for a, b in zip(mats, mats[1:])):
        raise CurveError("duplicate forward-curve pillar")

    pillars: list[float] = []
    values: list[float] = []
    for q in quotes:
        if abs(q.tenor - tenor) > 1e-9:
            raise CurveError(f"quote tenor {q.tenor} does not match curve tenor {tenor}")
        n = q.maturity / tenor
        if abs(n - round(n)) > 1e-6:
            raise CurveError(
                f"quote maturity {q.maturity} not aligned with tenor {tenor}"
            )
        dates = tenor * np.arange(1, int(round(n)) + 1)
        disc = dc.discount(dates)
        t_prev = pillars[-1] if pillars else None
        alpha = np.empty_like(dates)
        beta = np.empty_like(dates)
        for i, d in enumerate(dates):
            if t_prev is not None and d <= t_prev + 1e-9:
                prev_curve = ForwardCurve(tenor, np.array(pillars), np.array(values))
                alpha[i], beta[i] = prev_curve.forward(d), 0.0
            elif t_prev is None:
                alpha[i], beta[i] = 0.0, 1.0
            else:
                w = (d - t_prev) / (q.maturity - t_prev)
                alpha[i], beta[i] = values[-1] * (1.0 - w), w
        denom = float(np.sum(disc * beta))
        if abs(denom) < 1e-14:
            raise CurveError(f"forward bootstrap singular at pillar {q.maturity}")
        new_val = (q.rate * float(np.sum(disc)) - float(np.sum(disc * alpha))) / denom
        pillars.append(q.maturity)
        values.append(new_val)
    return ForwardCurve(tenor, np.array(pillars), np.array(values))


@dataclass
class CurveSet:
    """Discount curve plus one forward curve per quoted tenor."""

    discount: DiscountCurve
    forwards: dict = field(default_factory=dict)

    def __post_init__(self):
        self.forwards = {round(float(x), 9): fc for x, fc in self.forwards.items()}

    @classmethod
    def from_quotes(cls, ois_quotes, irs_quotes_by_tenor) -> "CurveSet":
        dc = bootstrap_discount_curve(ois_quotes)
        fwds = {
            x: bootstrap_forward_curve(x, dc, qs)
            for x, qs in irs_quotes_by_tenor.items()
        }
        return cls(dc, fwds)

    def forward_curve(self, tenor: float) -> ForwardCurve:
        key = round(float(tenor), 9)
        if key not in self.forwards:
            raise CurveError(f"no forward curve for tenor {tenor}")
        return self.forwards[key]


def parse_tenor(text: str) -> float:
    """Parse ``3m`` / ``1y`` / plain year-fraction tenor strings."""
    s = str(text).strip().lower()
    if not s:
        raise CurveError("empty tenor")
    try:
        if s.endswith("m"):
            return float(s[:-1]) / 12.0
        if s.endswith("y"):
            return float(s[:-1])
        return float(s)
    except ValueError as exc:
        raise CurveError(f"cannot parse tenor {text!r}") from exc


def load_quotes_csv(path):
    """Read a ``type,tenor,maturity,value`` quote file.

    Returns ``(ois_quotes, irs_quotes_by_tenor)``.  Maturities accept the same
    formats as tenors.  Unknown types are rejected.
    """
    ois: list[OisQuote] = []
    irs: dict[float, list[IrsQuote]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"type", "tenor", "maturity", "value"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise CurveError(
                f"quote file must have columns {sorted(expected)}, got {reader.fieldnames}"
            )
        for row in reader:
            kind = row["type"].strip().lower()
            maturity = parse_tenor(row["maturity"])
            value = float(row["value"])
            if kind == "ois":
                ois.append(OisQuote(maturity, value))
            elif kind == "irs":
                tenor = round(parse_tenor(row["tenor"]), 9)
                irs.setdefault(tenor, []).append(IrsQuote(tenor, maturity, value))
            else:
                raise CurveError(f"unknown quote type {row['type']!r}")
    return ois, irs
