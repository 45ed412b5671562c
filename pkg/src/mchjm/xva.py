"""Bilateral valuation adjustments with collateral and cure-period gap risk.

One kernel covers both regimes.  At each valuation node ``u`` the close-out
shortfall is the window-end value of the position (coupons paid inside
``(u, u + delta]`` capitalised at the realised collateral rate, plus the
mark-to-market at ``u + delta``) against the collateral ``alpha`` times the
mark at ``u`` carried in the collateral account.  Default intensities are
window-adjusted: a party's loss rate is its counterpart's intensity plus its
own intensity times the counterpart's window default probability.  With an
empty window the adjustment vanishes and the formulas reduce -- term by
term, in floating point -- to the no-gap case, so ``bilateral_adjustment``
and ``bilateral_adjustment_gap`` with a zero cure period are the same
computation.

Sign conventions: the counterparty-risk term is nonnegative, the own-risk
term nonpositive, ``bilateral`` is their sum and ``adjusted`` is the
perfect-collateral price minus ``bilateral``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .credit import CirPP, lambda_delta
from .engine import EngineError, PathSet, build_correlation, build_grid, simulate
from .products import FixingStore, Trade, epsilon, epsilon_forward, price_perfect_collateral
from .termstructures import CurveSet

_TOL = 1e-9


class XvaError(ValueError):
    """Invalid valuation-adjustment request."""


@dataclass(frozen=True)
class CollateralSpec:
    """Collateral fraction, cure period, and loss severities."""

    alpha: float = 1.0
    delta: float = 0.0
    lgd_i: float = 0.6
    lgd_c: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise XvaError("collateral fraction must lie in [0, 1]")
        if self.delta < 0.0:
            raise XvaError("cure period must be nonnegative")
        if not (0.0 <= self.lgd_i <= 1.0 and 0.0 <= self.lgd_c <= 1.0):
            raise XvaError("loss severities must lie in [0, 1]")


@dataclass(frozen=True)
class XvaResult:
    price: float
    cva: float
    dva: float
    se_cva: float
    se_dva: float
    se_bilateral: float
    n_paths: int
    seed: int

    @property
    def bilateral(self) -> float:
        return self.cva + self.dva

    @property
    def adjusted(self) -> float:
        return self.price - self.bilateral


def _trapz_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    gaps = np.diff(times)
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return w


@dataclass
class ExposureCache:
    """Per-node discounted exposures and default-rate weights for one path set.

    Everything that does not depend on the collateral fraction or loss
    severities is precomputed, so collateral sweeps reuse one simulation.
    """

    trade: Trade
    price: float
    n_paths: int
    seed: int
    disc_eps: np.ndarray  # (paths, nodes)  D(0,u) eps_u
    disc_eps_fwd: np.ndarray  # (paths, nodes)  D(0,u+delta) window-end value
    rate_c: np.ndarray  # (paths, nodes)  weight * survival * counterparty loss rate
    rate_i: np.ndarray  # (paths, nodes)  weight * survival * own loss rate

    @classmethod
    def build(
        cls, trade: Trade, paths: PathSet, curves: CurveSet, use_window: bool
    ) -> "ExposureCache":
        grid = paths.grid
        horizon = grid.base_times[-1]
        if horizon < trade.maturity - _TOL:
            raise XvaError(
                f"grid horizon {horizon} is shorter than the trade maturity {trade.maturity}"
            )
        for event in trade.event_times():
            try:
                grid.node_of(event)
            except EngineError:
                raise XvaError(f"trade event {event} is not a simulation node") from None
        base = grid.base_idx
        if use_window and grid.fwd_idx is not None:
            fwd = grid.fwd_idx
        else:
            fwd = base
        keep = grid.base_times <= trade.maturity + _TOL
        base, fwd = base[keep], fwd[keep]
        times = grid.times[base]
        weights = _trapz_weights(times)
        fx = FixingStore(paths, curves)
        n_b = base.size
        shape = (paths.n_paths, n_b)
        disc_eps = np.empty(shape)
        disc_eps_fwd = np.empty(shape)
        rate_c = np.empty(shape)
        rate_i = np.empty(shape)
        for jb in range(n_b):
            j, j2 = base[jb], fwd[jb]
            eps_u = epsilon(trade, paths, curves, times[jb], fx)
            eps_f = (
                eps_u
                if j2 == j
                else epsilon_forward(trade, paths, curves, j, j2, fx)
            )
            disc_eps[:, jb] = np.exp(-paths.int_e[:, j]) * eps_u
            disc_eps_fwd[:, jb] = np.exp(-paths.int_e[:, j2]) * eps_f
            surv = np.exp(-(paths.int_lam_i[:, j] + paths.int_lam_c[:, j]))
            lam_c, lam_i = lambda_delta(
                paths.lam_c[:, j],
                paths.lam_i[:, j],
                paths.int_lam_c[:, j2] - paths.int_lam_c[:, j],
                paths.int_lam_i[:, j2] - paths.int_lam_i[:, j],
            )
            rate_c[:, jb] = weights[jb] * surv * lam_c
            rate_i[:, jb] = weights[jb] * surv * lam_i
        return cls(
            trade, price_perfect_collateral(trade, curves), paths.n_paths, paths.seed,
            disc_eps, disc_eps_fwd, rate_c, rate_i,
        )

    def path_totals(self, collateral: CollateralSpec):
        """Per-path discounted default-loss totals ``(cva, dva)``."""
        shortfall = self.disc_eps_fwd - collateral.alpha * self.disc_eps
        cva_path = collateral.lgd_c * np.sum(
            self.rate_c * np.maximum(shortfall, 0.0), axis=1
        )
        dva_path = collateral.lgd_i * np.sum(
            self.rate_i * np.minimum(shortfall, 0.0), axis=1
        )
        return cva_path, dva_path

    def result(self, collateral: CollateralSpec) -> XvaResult:
        cva_path, dva_path = self.path_totals(collateral)
        root = np.sqrt(cva_path.size)
        return XvaResult(
            price=self.price,
            cva=float(cva_path.mean()),
            dva=float(dva_path.mean()),
            se_cva=float(cva_path.std() / root),
            se_dva=float(dva_path.std() / root),
            se_bilateral=float((cva_path + dva_path).std() / root),
            n_paths=self.n_paths,
            seed=self.seed,
        )


def bilateral_adjustment(
    trade: Trade,
    paths: PathSet,
    curves: CurveSet,
    collateral: CollateralSpec | None = None,
) -> XvaResult:
    """Valuation adjustments without a cure period.

    Any window partners on the path grid are ignored; the close-out value and
    the collateral reference the same node.
    """
    collateral = collateral or CollateralSpec()
    if collateral.delta != 0.0:
        raise XvaError("no-gap valuation requires a zero cure period; use the gap variant")
    return ExposureCache.build(trade, paths, curves, use_window=False).result(collateral)


def bilateral_adjustment_gap(
    trade: Trade,
    paths: PathSet,
    curves: CurveSet,
    collateral: CollateralSpec,
) -> XvaResult:
    """Valuation adjustments with cure-period gap risk.

    The path grid must have been built with the same cure period, so every
    valuation node has its window-end partner; with ``delta = 0`` this is the
    no-gap computation bit for bit.
    """
    if abs(paths.grid.delta - collateral.delta) > _TOL:
        raise XvaError(
            f"path grid was built with cure period {paths.grid.delta}, "
            f"collateral specifies {collateral.delta}"
        )
    return ExposureCache.build(trade, paths, curves, use_window=True).result(collateral)


def alpha_sweep(
    trade: Trade,
    paths: PathSet,
    curves: CurveSet,
    alphas,
    collateral: CollateralSpec | None = None,
):
    """Adjustments across collateral fractions, reusing one simulation.

    The cure period and severities come from ``collateral``; its fraction is
    replaced by each sweep value in turn.
    """
    collateral = collateral or CollateralSpec(delta=paths.grid.delta)
    if abs(paths.grid.delta - collateral.delta) > _TOL:
        raise XvaError(
            f"path grid was built with cure period {paths.grid.delta}, "
            f"collateral specifies {collateral.delta}"
        )
    cache = ExposureCache.build(trade, paths, curves, use_window=True)
    out = []
    for a in alphas:
        spec = CollateralSpec(float(a), collateral.delta, collateral.lgd_i, collateral.lgd_c)
        out.append((float(a), cache.result(spec)))
    return out


def wwr_sweep(
    trade: Trade,
    model,
    curves: CurveSet,
    credit_inv: CirPP,
    credit_cpty: CirPP,
    knob: str,
    values,
    n_paths: int,
    seed: int,
    collateral: CollateralSpec | None = None,
    dt: float = 1.0 / 12,
    credit_credit: float = 0.0,
    vol_credit: float = 0.0,
    knob_tenors=(0.25, 0.5),
    workers: int | None = None,
):
    """Adjustments across market-credit correlation values.

    Each point re-simulates with the same seed, so paths differ across knob
    values only through the correlation and the sweep is smooth in the knob.
    A knob value whose correlation matrix cannot be factorised is reported
    with its value.
    """
    collateral = collateral or CollateralSpec()
    grid = build_grid(
        trade.maturity, dt=dt, event_times=trade.event_times(), delta=collateral.delta
    )
    out = []
    for value in values:
        try:
            corr = build_correlation(
                model,
                credit_credit=credit_credit,
                vol_credit=vol_credit,
                knob=knob,
                knob_value=float(value),
                knob_tenors=knob_tenors,
            )
        except EngineError as err:
            raise XvaError(f"correlation spec rejected at knob value {value}: {err}") from err
        paths = simulate(
            model, curves, credit_inv, credit_cpty, corr, grid, n_paths, seed, workers
        )
        out.append((float(value), bilateral_adjustment_gap(trade, paths, curves, collateral)))
    return out
