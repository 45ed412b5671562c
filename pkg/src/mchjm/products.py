"""Collateralised swap products and pathwise exposure.

Trades are bundles of legs with aligned payment schedules.  A leg pays, per
unit notional at the end of each period: a fixed coupon, a term-rate coupon
fixed at the period start (plus an optional spread), or the compounded
collateral-account rate over the period.  The pathwise mark-to-market
``epsilon`` values future coupons in closed form from the reconstructed
curves at the valuation node; coupons already fixed but not yet paid use the
stored fixing (term rates) or the accrued collateral account (compounded
legs).

``epsilon_forward`` capitalises the coupons paid inside a window to the
window end at the realised collateral rate and adds the mark-to-market
there; with an empty window it reduces to ``epsilon`` at the same node,
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import PathSet
from .hjm import bond_price, libor_forward
from .termstructures import CurveSet

_TOL = 1e-9


class ProductError(ValueError):
    """Invalid trade definition or valuation request."""


def _schedule(period: float, maturity: float, start: float = 0.0) -> tuple:
    if period <= 0:
        raise ProductError("leg period must be positive")
    span = maturity - start
    count = int(round(span / period))
    if count < 1 or abs(count * period - span) > _TOL:
        raise ProductError(
            f"term from {start} to {maturity} is not a whole number of {period} periods"
        )
    return tuple(start + period * k for k in range(1, count + 1))


@dataclass(frozen=True)
class Leg:
    """One stream of coupons; ``sign`` is +1 received, -1 paid."""

    kind: str  # "fixed" | "term" | "compounded"
    sign: float
    period: float
    pay_times: tuple
    rate: float = 0.0  # fixed coupon rate, or spread over the floating index
    tenor: float = 0.0  # term-rate index tenor; equals the period


@dataclass(frozen=True)
class Trade:
    kind: str
    notional: float
    maturity: float
    legs: tuple

    def event_times(self) -> np.ndarray:
        """Payment and fixing times, for simulation-grid construction."""
        out = set()
        for leg in self.legs:
            for t in leg.pay_times:
                out.add(t)
                if leg.kind in ("term", "compounded"):
                    out.add(t - leg.period)
        return np.array(sorted(x for x in out if x > _TOL))


def ois_swap(
    notional: float,
    maturity: float,
    fixed_rate: float,
    payer: bool = True,
    period: float = 1.0,
) -> Trade:
    """Fixed leg against the compounded collateral rate, same schedule."""
    sgn = -1.0 if payer else 1.0
    times = _schedule(period, maturity)
    return Trade(
        "ois",
        notional,
        maturity,
        (
            Leg("fixed", sgn, period, times, rate=fixed_rate),
            Leg("compounded", -sgn, period, times),
        ),
    )


def irs(
    notional: float,
    maturity: float,
    fixed_rate: float,
    payer: bool = True,
    float_tenor: float = 0.5,
    fixed_period: float = 1.0,
    start: float = 0.0,
) -> Trade:
    """Fixed leg against the ``float_tenor`` term rate fixed in advance.

    ``start > 0`` gives a forward-starting swap whose first periods begin
    there; ``maturity`` is always the final payment.
    """
    sgn = -1.0 if payer else 1.0
    return Trade(
        "irs",
        notional,
        maturity,
        (
            Leg(
                "fixed", sgn, fixed_period,
                _schedule(fixed_period, maturity, start), rate=fixed_rate,
            ),
            Leg(
                "term", -sgn, float_tenor,
                _schedule(float_tenor, maturity, start), tenor=float_tenor,
            ),
        ),
    )


def basis_swap(
    notional: float,
    maturity: float,
    spread: float,
    recv_tenor: float = 0.25,
    pay_tenor: float = 0.5,
    payer: bool = False,
) -> Trade:
    """Receive the short-tenor rate plus a spread, pay the long-tenor rate.

    ``payer=True`` flips both legs.
    """
    sgn = -1.0 if payer else 1.0
    return Trade(
        "basis",
        notional,
        maturity,
        (
            Leg(
                "term", sgn, recv_tenor, _schedule(recv_tenor, maturity),
                rate=spread, tenor=recv_tenor,
            ),
            Leg(
                "term", -sgn, pay_tenor, _schedule(pay_tenor, maturity),
                tenor=pay_tenor,
            ),
        ),
    )


# ----- initial (curve-only) valuation -----


def price_perfect_collateral(trade: Trade, curves: CurveSet) -> float:
    """Time-zero value per the initial curves; no simulation involved."""
    dc = curves.discount
    total = 0.0
    for leg in trade.legs:
        pays = np.asarray(leg.pay_times)
        disc = dc.discount(pays)
        if leg.kind == "fixed":
            value = leg.rate * leg.period * disc.sum()
        elif leg.kind == "term":
            fc = curves.forward_curve(leg.tenor)
            fwd = fc.forward(pays)
            value = leg.period * float(np.sum(disc * (fwd + leg.rate)))
        elif leg.kind == "compounded":
            starts = dc.discount(pays - leg.period)
            value = float(np.sum(starts - disc)) + leg.rate * leg.period * disc.sum()
        else:
            raise ProductError(f"unknown leg kind {leg.kind!r}")
        total += leg.sign * value
    return trade.notional * total


def par_swap_rate(
    curves: CurveSet,
    maturity: float,
    float_tenor: float = 0.5,
    fixed_period: float = 1.0,
    start: float = 0.0,
) -> float:
    """Fixed rate making the fixed-against-term-rate swap worth zero."""
    dc = curves.discount
    fc = curves.forward_curve(float_tenor)
    fpays = np.asarray(_schedule(float_tenor, maturity, start))
    float_value = float_tenor * float(
        np.sum(dc.discount(fpays) * fc.forward(fpays))
    )
    kpays = np.asarray(_schedule(fixed_period, maturity, start))
    annuity = fixed_period * float(np.sum(dc.discount(kpays)))
    return float_value / annuity


def annuity(
    curves: CurveSet, maturity: float, fixed_period: float = 1.0, start: float = 0.0
) -> float:
    """Time-zero value of the fixed leg per unit rate and notional."""
    pays = np.asarray(_schedule(fixed_period, maturity, start))
    return fixed_period * float(np.sum(curves.discount.discount(pays)))


def par_ois_rate_swap(curves: CurveSet, maturity: float, period: float = 1.0) -> float:
    """Fixed rate making the fixed-against-compounded swap worth zero."""
    dc = curves.discount
    pays = np.asarray(_schedule(period, maturity))
    float_value = float(np.sum(dc.discount(pays - period) - dc.discount(pays)))
    annuity = period * float(np.sum(dc.discount(pays)))
    return float_value / annuity


def par_basis_spread(
    curves: CurveSet, maturity: float, recv_tenor: float = 0.25, pay_tenor: float = 0.5
) -> float:
    """Spread on the short-tenor leg making the tenor swap worth zero."""
    dc = curves.discount

    def leg_value(tenor):
        fc = curves.forward_curve(tenor)
        pays = np.asarray(_schedule(tenor, maturity))
        return tenor * float(np.sum(dc.discount(pays) * fc.forward(pays)))

    pays1 = np.asarray(_schedule(recv_tenor, maturity))
    annuity = recv_tenor * float(np.sum(dc.discount(pays1)))
    return (leg_value(pay_tenor) - leg_value(recv_tenor)) / annuity


# ----- pathwise valuation -----


@dataclass
class FixingStore:
    """Lazily reconstructed term-rate fixings, cached per (tenor, node)."""

    paths: PathSet
    curves: CurveSet
    _cache: dict = field(default_factory=dict)

    def term_fixing(self, tenor: float, reset_time: float) -> np.ndarray:
        node = self.paths.grid.node_of(reset_time)
        key = (round(tenor, 9), node)
        if key not in self._cache:
            t = self.paths.grid.times[node]
            xs, yp = self.paths.state_at(node)
            self._cache[key] = libor_forward(
                self.paths.model, self.curves, t, t + tenor, tenor, xs, yp
            )
        return self._cache[key]


def epsilon(
    trade: Trade,
    paths: PathSet,
    curves: CurveSet,
    u: float,
    fixings: FixingStore | None = None,
) -> np.ndarray:
    """Pathwise mark-to-market at time ``u`` under perfect collateral.

    Coupons paying at exactly ``u`` are treated as already settled.
    """
    if fixings is None:
        fixings = FixingStore(paths, curves)
    node = paths.grid.node_of(u)
    t = paths.grid.times[node]
    xs, yp = paths.state_at(node)
    model = paths.model
    total = np.zeros(paths.n_paths)
    for leg in trade.legs:
        value = np.zeros(paths.n_paths)
        for pay in leg.pay_times:
            if pay <= t + _TOL:
                continue
            start = pay - leg.period
            disc = bond_price(model, curves, t, pay, xs, yp)
            if leg.kind == "fixed":
                value += leg.rate * leg.period * disc
            elif leg.kind == "term":
                if start < t - _TOL:  # fixed already, not yet paid
                    rate = fixings.term_fixing(leg.tenor, start)
                else:
                    rate = libor_forward(model, curves, t, pay, leg.tenor, xs, yp)
                value += leg.period * (rate + leg.rate) * disc
            elif leg.kind == "compounded":
                if start < t - _TOL:  # accrual began, capitalise what has accrued
                    s_node = paths.grid.node_of(start)
                    accrued = np.exp(paths.int_e[:, node] - paths.int_e[:, s_node])
                    value += accrued - disc
                else:
                    value += bond_price(model, curves, t, start, xs, yp) - disc
                if leg.rate:
                    value += leg.rate * leg.period * disc
            else:
                raise ProductError(f"unknown leg kind {leg.kind!r}")
        total += leg.sign * value
    return trade.notional * total


def realized_flow(
    trade: Trade,
    paths: PathSet,
    pay: float,
    leg: Leg,
    fixings: FixingStore,
) -> np.ndarray:
    """Coupon amount per unit notional actually paid at ``pay`` on ``leg``."""
    if leg.kind == "fixed":
        return np.full(paths.n_paths, leg.rate * leg.period)
    start = pay - leg.period
    if leg.kind == "term":
        rate = fixings.term_fixing(leg.tenor, start)
        return leg.period * (rate + leg.rate)
    if leg.kind == "compounded":
        s_node = paths.grid.node_of(start)
        e_node = paths.grid.node_of(pay)
        accrual = np.expm1(paths.int_e[:, e_node] - paths.int_e[:, s_node])
        return accrual + leg.rate * leg.period
    raise ProductError(f"unknown leg kind {leg.kind!r}")


def epsilon_forward(
    trade: Trade,
    paths: PathSet,
    curves: CurveSet,
    from_node: int,
    to_node: int,
    fixings: FixingStore | None = None,
) -> np.ndarray:
    """Window-end value of the position entered at the window start.

    Coupons paid inside ``(t_from, t_to]`` are capitalised to ``t_to`` at the
    realised collateral rate; the mark-to-market at ``t_to`` is added.  With
    ``from_node == to_node`` this is exactly ``epsilon`` at that node.
    """
    if fixings is None:
        fixings = FixingStore(paths, curves)
    t_from = paths.grid.times[from_node]
    t_to = paths.grid.times[to_node]
    total = epsilon(trade, paths, curves, t_to, fixings)
    if to_node == from_node:
        return total
    cap_base = paths.int_e[:, to_node]
    for leg in trade.legs:
        for pay in leg.pay_times:
            if not (t_from + _TOL < pay <= t_to + _TOL):
                continue
            flow = realized_flow(trade, paths, pay, leg, fixings)
            cap = np.exp(cap_base - paths.int_e[:, paths.grid.node_of(pay)])
            total = total + trade.notional * leg.sign * flow * cap
    return total
