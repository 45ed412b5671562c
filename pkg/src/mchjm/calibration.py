"""Swaption pricing, implied-vol inversion, and model calibration.

A swaption is priced by simulation: the exercise value is the pathwise
mark-to-market of the forward-starting underlying swap at expiry, discounted
along the collateral account, and the option price is the mean positive
part.  Because the state is Markov the snapshot at expiry is exact; no
nested simulation is involved.  One path set prices every quote in a book,
which keeps the calibration objective smooth in the parameters: every trial
re-simulates with the same seed, so objective differences across trials
reflect the parameters, not the draws.

Quoted volatilities follow either the normal (Bachelier) or the lognormal
(Black, optionally shifted) convention.  Inversion is by safeguarded
bracketing on the monotone price-in-vol map.

Calibration is derivative-free least squares in quoted-vol units over each
family's free parameters (mean reversions and factor loadings, plus the
variance and tenor-loading parameters where the family has them), with
simplex restarts and a fixed evaluation budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import ndtr

from .engine import build_correlation, build_grid, simulate
from .hjm import HjmModel, StochVolParams, cheyette, hull_white, moreni_pallavicini
from .products import Trade, annuity, epsilon, irs, par_swap_rate
from .termstructures import CurveError, CurveSet

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class CalibrationError(ValueError):
    """Invalid quote, price outside bounds, or unusable parameter start."""


_CONVENTIONS = ("normal", "lognormal")


@dataclass(frozen=True)
class SwaptionQuote:
    """One volatility quote: option geometry plus quoted vol and convention.

    ``strike_offset`` is the absolute shift of the strike from the forward
    par rate of the underlying swap.
    """

    expiry: float
    tenor_len: float
    libor_tenor: float
    strike_offset: float
    vol: float
    convention: str

    def __post_init__(self):
        if self.expiry <= 0.0 or self.tenor_len <= 0.0 or self.libor_tenor <= 0.0:
            raise CalibrationError("quote needs positive expiry and tenors")
        if self.convention not in _CONVENTIONS:
            raise CalibrationError(
                f"unknown vol convention {self.convention!r}; use normal or lognormal"
            )
        if self.vol < 0.0:
            raise CalibrationError("quoted vol must be nonnegative")


_QUOTE_FIELDS = ("expiry", "tenor_len", "libor_tenor", "strike_offset", "vol", "convention")


def load_quote_csv(path) -> list:
    """Read swaption quotes; the header must carry exactly the known fields."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(_QUOTE_FIELDS):
            raise CalibrationError(
                f"quote file needs columns {','.join(_QUOTE_FIELDS)}"
            )
        out = []
        for row in reader:
            out.append(
                SwaptionQuote(
                    expiry=float(row["expiry"]),
                    tenor_len=float(row["tenor_len"]),
                    libor_tenor=float(row["libor_tenor"]),
                    strike_offset=float(row["strike_offset"]),
                    vol=float(row["vol"]),
                    convention=row["convention"].strip(),
                )
            )
    if not out:
        raise CalibrationError("quote file holds no quotes")
    return out


def save_quote_csv(path, quotes) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_QUOTE_FIELDS)
        for q in quotes:
            writer.writerow(
                [q.expiry, q.tenor_len, q.libor_tenor, q.strike_offset, q.vol, q.convention]
            )


# ----- option geometry -----


@dataclass(frozen=True)
class SwaptionGeometry:
    """Curve-derived quantities of one quote's underlying swap."""

    trade: Trade
    expiry: float
    forward: float
    strike: float
    annuity: float


def swaption_geometry(curves: CurveSet, quote: SwaptionQuote) -> SwaptionGeometry:
    """Forward par rate, strike, annuity, and payer underlying for a quote.

    The underlying swap starts at expiry, pays the quote's term rate against
    an annual fixed leg, and matures ``tenor_len`` later.
    """
    end = quote.expiry + quote.tenor_len
    try:
        forward = par_swap_rate(
            curves, end, float_tenor=quote.libor_tenor, fixed_period=1.0,
            start=quote.expiry,
        )
    except CurveError as err:
        raise CalibrationError(f"quote geometry outside curve coverage: {err}") from err
    strike = forward + quote.strike_offset
    ann = annuity(curves, end, fixed_period=1.0, start=quote.expiry)
    trade = irs(
        1.0, end, strike, payer=True, float_tenor=quote.libor_tenor,
        fixed_period=1.0, start=quote.expiry,
    )
    return SwaptionGeometry(trade, quote.expiry, forward, strike, ann)


# ----- Monte Carlo pricing -----


def _option_value(geom: SwaptionGeometry, paths, curves, payer: bool):
    node = paths.grid.node_of(geom.expiry)
    eps = epsilon(geom.trade, paths, curves, geom.expiry)
    disc = np.exp(-paths.int_e[:, node])
    payoff = disc * np.maximum(eps if payer else -eps, 0.0)
    return float(payoff.mean()), float(payoff.std() / math.sqrt(payoff.size))


def price_swaptions_mc(
    model: HjmModel,
    curves: CurveSet,
    quotes,
    n_paths: int,
    seed: int,
    dt: float = 1.0 / 12,
    payer: bool = True,
    workers: int | None = None,
):
    """Price a book of swaptions from one credit-free simulation.

    Returns ``[(price, se), ...]`` aligned with the quotes.
    """
    geoms = [swaption_geometry(curves, q) for q in quotes]
    expiries = sorted({g.expiry for g in geoms})
    grid = build_grid(max(expiries), dt=dt, event_times=expiries)
    corr = build_correlation(model)
    paths = simulate(model, curves, None, None, corr, grid, n_paths, seed, workers)
    return [_option_value(g, paths, curves, payer) for g in geoms]


def price_swaption_mc(
    model: HjmModel,
    curves: CurveSet,
    quote: SwaptionQuote,
    n_paths: int,
    seed: int,
    dt: float = 1.0 / 12,
    payer: bool = True,
    workers: int | None = None,
):
    """Monte Carlo price and standard error of one swaption."""
    return price_swaptions_mc(
        model, curves, [quote], n_paths, seed, dt=dt, payer=payer, workers=workers
    )[0]


# ----- vol conventions -----


def bachelier_price(
    forward: float, strike: float, expiry: float, vol: float, annuity_: float
) -> float:
    """Payer price under the normal convention."""
    if vol <= 0.0:
        return annuity_ * max(forward - strike, 0.0)
    s = vol * math.sqrt(expiry)
    d = (forward - strike) / s
    return annuity_ * s * (d * ndtr(d) + math.exp(-0.5 * d * d) / _SQRT_2PI)


def black_price(
    forward: float,
    strike: float,
    expiry: float,
    vol: float,
    annuity_: float,
    shift: float = 0.0,
) -> float:
    """Payer price under the (shifted) lognormal convention."""
    f, k = forward + shift, strike + shift
    if f <= 0.0 or k <= 0.0:
        raise CalibrationError(
            "lognormal convention needs positive shifted forward and strike"
        )
    if vol <= 0.0:
        return annuity_ * max(forward - strike, 0.0)
    s = vol * math.sqrt(expiry)
    d1 = math.log(f / k) / s + 0.5 * s
    return annuity_ * (f * ndtr(d1) - k * ndtr(d1 - s))


def implied_vol(
    price: float,
    forward: float,
    strike: float,
    expiry: float,
    annuity_: float,
    convention: str,
    shift: float = 0.0,
) -> float:
    """Invert the payer price for the quoted vol; |price error| < 1e-12.

    A price at intrinsic maps to vol zero.  Prices outside the arbitrage
    bounds of the convention are rejected, never clamped.
    """
    if convention not in _CONVENTIONS:
        raise CalibrationError(f"unknown vol convention {convention!r}")
    intrinsic = annuity_ * max(forward - strike, 0.0)
    if price < intrinsic - 1e-12:
        raise CalibrationError(f"price {price} sits below intrinsic value {intrinsic}")
    if convention == "lognormal":
        bound = annuity_ * (forward + shift)
        if price >= bound - 1e-15:
            raise CalibrationError(f"price {price} reaches the forward bound {bound}")

        def f(v):
            return black_price(forward, strike, expiry, v, annuity_, shift) - price
    else:

        def f(v):
            return bachelier_price(forward, strike, expiry, v, annuity_) - price

    if price <= intrinsic + 1e-15:
        return 0.0
    hi = 0.01
    while f(hi) < 0.0:
        hi *= 4.0
        if hi > 1e4:
            raise CalibrationError(f"price {price} outside the convention's range")
    return float(brentq(f, 1e-14, hi, xtol=1e-16, rtol=8.9e-16, maxiter=200))


# ----- calibration -----

FREE_PARAMS = {
    "hw": ("mean reversions", "factor loadings"),
    "cheyette": (
        "mean reversions", "factor loadings", "variance reversion",
        "vol-of-vol level", "vol-of-vol front factor", "vol-of-vol decay",
        "initial variance", "variance-factor correlations",
    ),
    "mp": (
        "mean reversions", "factor loadings", "variance reversion",
        "vol-of-vol level", "vol-of-vol front factor", "vol-of-vol decay",
        "initial variance", "variance-factor correlations", "tenor loadings",
    ),
}


def _require_positive(value: float, name: str) -> float:
    if value <= 0.0:
        raise CalibrationError(f"free parameter {name} must be positive to calibrate")
    return math.log(value)


def _pack(model: HjmModel) -> np.ndarray:
    """Transform free parameters to an unconstrained vector.

    Positive quantities go through log, correlations through atanh; the
    strictly-lower triangle of the loading matrix stays raw.
    """
    n = model.n_factors
    out = [_require_positive(model.a[i], f"a[{i}]") for i in range(n)]
    for i in range(n):
        for j in range(i + 1):
            if i == j:
                out.append(_require_positive(model.R[i, i], f"R[{i},{i}]"))
            else:
                out.append(model.R[i, j])
    if model.stochastic_vol:
        p = model.vol
        out.append(_require_positive(p.eta_v, "eta_v"))
        out.append(_require_positive(p.nu0, "nu0"))
        out.append(_require_positive(p.nu1, "nu1"))
        out.append(_require_positive(p.nu2, "nu2"))
        out.append(_require_positive(p.v_bar, "v_bar"))
        for i, r in enumerate(p.rho_vw):
            if abs(r) >= 1.0:
                raise CalibrationError(f"rho_vw[{i}] must lie inside (-1, 1)")
            out.append(math.atanh(r))
    if model.family == "mp":
        out.extend(np.asarray(model.eta_q, float))
    return np.array(out)


def _unpack(template: HjmModel, theta: np.ndarray) -> HjmModel:
    n = template.n_factors
    pos = 0

    def take(count):
        nonlocal pos
        block = theta[pos : pos + count]
        pos += count
        return block

    a = np.exp(take(n))
    r = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            val = take(1)[0]
            r[i, j] = math.exp(val) if i == j else val
    if not template.stochastic_vol:
        return hull_white(a, r)
    eta_v, nu0, nu1, nu2, v_bar = np.exp(take(5))
    rho = tuple(np.tanh(take(n)))
    vol = StochVolParams(
        eta_v=eta_v, nu0=nu0, nu1=nu1, nu2=nu2, v_bar=v_bar, rho_vw=rho
    )
    if template.family == "cheyette":
        return cheyette(a, r, vol)
    eta_q = take(n).copy()
    return moreni_pallavicini(a, r, vol, eta_q, template.gamma)


@dataclass(frozen=True)
class CalibrationResult:
    model: HjmModel
    rmse: float
    residuals: np.ndarray  # per-quote vol error, model minus target
    iterations: int
    converged: bool
    n_paths: int
    seed: int


class _StopSearch(Exception):
    pass


def calibrate(
    initial_model: HjmModel,
    curves: CurveSet,
    quotes,
    n_paths: int = 4096,
    seed: int = 7451,
    budget: int = 400,
    restarts: int = 1,
    tol: float = 1e-6,
    dt: float = 1.0 / 12,
    workers: int | None = None,
) -> CalibrationResult:
    """Least-squares fit of the free parameters to quoted vols.

    The objective is the equal-weight RMSE of model-minus-target implied
    vols, each trial priced from one simulation with a common seed.  Simplex
    search with deterministic restarts; if the budget runs out before the
    tolerance is met the best parameters found are returned with
    ``converged`` unset.
    """
    quotes = list(quotes)
    geoms = [swaption_geometry(curves, q) for q in quotes]
    targets = np.array([q.vol for q in quotes])
    expiries = sorted({g.expiry for g in geoms})
    grid = build_grid(max(expiries), dt=dt, event_times=expiries)

    theta0 = _pack(initial_model)
    evals = 0
    cache: dict = {}
    best = {"rmse": math.inf, "theta": theta0, "residuals": None}

    def residuals_for(theta: np.ndarray) -> np.ndarray:
        model = _unpack(initial_model, theta)
        corr = build_correlation(model)
        paths = simulate(model, curves, None, None, corr, grid, n_paths, seed, workers)
        vols = np.empty(len(geoms))
        for idx, (g, q) in enumerate(zip(geoms, quotes)):
            price, _ = _option_value(g, paths, curves, payer=True)
            try:
                vols[idx] = implied_vol(
                    max(price, 0.0), g.forward, g.strike, g.expiry, g.annuity,
                    q.convention,
                )
            except CalibrationError:
                vols[idx] = 1.0  # off the vol scale entirely; steers away
        return vols - targets

    def objective(theta: np.ndarray) -> float:
        nonlocal evals
        key = theta.tobytes()
        if key in cache:
            return cache[key]
        if evals >= budget:
            raise _StopSearch
        evals += 1
        res = residuals_for(theta)
        rmse = float(np.sqrt(np.mean(res**2)))
        cache[key] = rmse
        if rmse < best["rmse"]:
            best.update(rmse=rmse, theta=theta.copy(), residuals=res)
        if rmse <= tol:
            raise _StopSearch
        return rmse

    rng = np.random.default_rng(seed)
    start = theta0
    try:
        for _ in range(max(1, restarts)):
            minimize(
                objective,
                start,
                method="Nelder-Mead",
                options={
                    "maxfev": budget,
                    "xatol": 1e-7,
                    "fatol": 0.01 * tol,
                    "disp": False,
                },
            )
            # restart the simplex around the best point seen so far
            start = best["theta"] * (1.0 + 0.05 * rng.standard_normal(theta0.size))
    except _StopSearch:
        pass

    if best["residuals"] is None:
        best["residuals"] = residuals_for(best["theta"])
    return CalibrationResult(
        model=_unpack(initial_model, best["theta"]),
        rmse=best["rmse"],
        residuals=best["residuals"],
        iterations=evals,
        converged=best["rmse"] <= tol,
        n_paths=n_paths,
        seed=seed,
    )


def synthetic_quotes(
    model: HjmModel,
    curves: CurveSet,
    geometries,
    n_paths: int,
    seed: int,
    dt: float = 1.0 / 12,
    convention: str = "normal",
    workers: int | None = None,
) -> list:
    """Generate target quotes the model reprices exactly under the same seed.

    ``geometries`` is a sequence of ``(expiry, tenor_len, libor_tenor,
    strike_offset)`` rows.
    """
    blanks = [
        SwaptionQuote(e, tl, lt, off, 0.0, convention) for e, tl, lt, off in geometries
    ]
    priced = price_swaptions_mc(model, curves, blanks, n_paths, seed, dt=dt, workers=workers)
    out = []
    for q, (price, _) in zip(blanks, priced):
        g = swaption_geometry(curves, q)
        vol = implied_vol(
            max(price, 0.0), g.forward, g.strike, g.expiry, g.annuity, convention
        )
        out.append(
            SwaptionQuote(
                q.expiry, q.tenor_len, q.libor_tenor, q.strike_offset, vol, convention
            )
        )
    return out
