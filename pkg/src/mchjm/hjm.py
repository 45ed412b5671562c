"""Markov representation of a separable-volatility multi-curve rate model.

The model family is parameterised by mean reversions ``a`` (one per factor), a
lower-triangular loading matrix ``R``, an optional square-root stochastic
variance ``v`` with mean level one, per-factor tenor loadings ``eta_q`` and a
shift decay ``gamma``:

* ``hw``        -- deterministic variance, ``eta_q = 0``, ``gamma = 0``
* ``cheyette``  -- stochastic variance, ``eta_q = 0``, ``gamma = 0``
* ``mp``        -- stochastic variance, free ``eta_q`` and ``gamma``

All observables at time ``t`` are functions of the factor vector ``X`` and the
symmetric convexity matrix ``Y``:

* instantaneous forward: ``f_t(T) = f_0(T) + g(t,T) . (X + Y G0(t,t,T))``
* bank-account rate:     ``e_t = f_0(t) + sum_i X_i``
* collateral bond:       ``P_t(T) = P_0(T)/P_0(t) exp(-G0.X - G0.Y.G0/2)``
* tenor forward:         ``kappa + F_t(T,x) = (kappa + F_0(T,x))
  exp(G . (X + Y (G0(t,t,T) - G/2)))`` with ``G = q_scale(x) * G0(t,T-x,T)``
* one-period collateral forward: same with ``q_scale = 1`` and shift ``1/x``.

``X`` diffuses with loading ``sqrt(v) R^T`` so its covariance rate is
``v R^T R``, the same matrix that drives ``Y``; that pairing is what makes the
discounted bond reconstruction a martingale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .termstructures import CurveSet, par_ois_rate


class ModelError(ValueError):
    """Invalid model parameters or reconstruction inputs."""


# ----- parameter containers -----


@dataclass(frozen=True)
class StochVolParams:
    """Square-root variance with mean level one and decaying vol-of-vol.

    ``dv = eta_v (1 - v) dt + nu(t) sqrt(v) dZ`` with
    ``nu(t) = nu0 (1 + (nu1 - 1) exp(-nu2 t))`` and ``v(0) = v_bar``.
    ``rho_vw`` correlates the variance driver with each factor driver.
    """

    eta_v: float
    nu0: float
    nu1: float = 1.0
    nu2: float = 0.0
    v_bar: float = 1.0
    rho_vw: tuple = ()

    def __post_init__(self):
        if self.eta_v < 0 or self.nu0 < 0 or self.v_bar <= 0:
            raise ModelError("need eta_v >= 0, nu0 >= 0, v_bar > 0")
        if any(abs(r) > 1.0 for r in self.rho_vw):
            raise ModelError("vol-rate correlations must lie in [-1, 1]")

    def vol_of_vol(self, t: float) -> float:
        return self.nu0 * (1.0 + (self.nu1 - 1.0) * math.exp(-self.nu2 * t))


@dataclass(frozen=True, eq=False)
class HjmModel:
    family: str
    a: np.ndarray
    R: np.ndarray
    vol: StochVolParams | None = None
    eta_q: np.ndarray | None = None
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, float)))
        n = self.a.size
        if self.family not in ("hw", "cheyette", "mp"):
            raise ModelError(f"unknown model family {self.family!r}")
        if np.any(self.a < 0) or not np.all(np.isfinite(self.a)):
            raise ModelError("mean reversions must be finite and nonnegative")
        if self.R.shape != (n, n):
            raise ModelError("loading matrix shape must match factor count")
        if np.any(np.abs(np.triu(self.R, 1)) > 0):
            raise ModelError("loading matrix must be lower triangular")
        if np.any(np.diag(self.R) <= 0):
            raise ModelError("loading matrix needs a positive diagonal")
        if self.family == "hw":
            if self.vol is not None:
                raise ModelError("hw has deterministic unit variance")
        elif self.vol is None:
            raise ModelError(f"{self.family} requires stochastic variance parameters")
        if self.vol is not None and self.vol.rho_vw and len(self.vol.rho_vw) != n:
            raise ModelError("rho_vw length must match factor count")
        if self.family == "mp":
            if self.eta_q is None:
                raise ModelError("mp requires tenor loadings eta_q")
            object.__setattr__(
                self, "eta_q", np.atleast_1d(np.asarray(self.eta_q, float))
            )
            if self.eta_q.size != n:
                raise ModelError("eta_q length must match factor count")
            if self.gamma < 0:
                raise ModelError("shift decay gamma must be nonnegative")
        else:
            if self.eta_q is not None and np.any(np.asarray(self.eta_q) != 0):
                raise ModelError(f"{self.family} fixes eta_q = 0")
            object.__setattr__(self, "eta_q", np.zeros(n))
            if self.gamma != 0.0:
                raise ModelError(f"{self.family} fixes gamma = 0")

    @property
    def n_factors(self) -> int:
        return self.a.size

    @property
    def stochastic_vol(self) -> bool:
        return self.vol is not None

    @property
    def cov_driver(self) -> np.ndarray:
        """Per-unit-variance covariance rate of the factor diffusion."""
        return self.R.T @ self.R

    def shift(self, tenor: float) -> float:
        """Displacement ``kappa(x) = exp(-gamma x)/x``; ``x kappa -> 1`` as x->0."""
        if tenor <= 0:
            raise ModelError("tenor must be positive")
        return math.exp(-self.gamma * tenor) / tenor

    def q_scale(self, tenor: float) -> np.ndarray:
        return np.exp(tenor * self.eta_q)


def hull_white(a, R) -> HjmModel:
    return HjmModel("hw", a, R)


def cheyette(a, R, vol: StochVolParams) -> HjmModel:
    return HjmModel("cheyette", a, R, vol=vol)


def moreni_pallavicini(a, R, vol: StochVolParams, eta_q, gamma: float) -> HjmModel:
    return HjmModel("mp", a, R, vol=vol, eta_q=eta_q, gamma=gamma)


# ----- decay integrals -----


def g_decay(a: np.ndarray, t: float, u: float) -> np.ndarray:
    """Componentwise ``exp(-a (u - t))`` for ``u >= t``."""
    return np.exp(-a * (u - t))


def g0_integral(a: np.ndarray, t: float, t0: float, t1: float) -> np.ndarray:
    """``int_{t0}^{t1} exp(-a (s - t)) ds``, stable down to ``a = 0``."""
    if t1 < t0:
        raise ModelError("integral bounds out of order")
    delta = t1 - t0
    with np.errstate(divide="ignore", invalid="ignore"):
        ramp = np.where(a > 0.0, -np.expm1(-a * delta) / np.where(a > 0.0, a, 1.0), delta)
    return np.exp(-a * (t0 - t)) * ramp


# ----- symmetric-matrix packing -----


def pack_indices(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def pack_symmetric(y: np.ndarray) -> np.ndarray:
    n = y.shape[-1]
    idx = pack_indices(n)
    return np.stack([y[..., i, j] for i, j in idx], axis=-1)


def unpack_symmetric(yp: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(yp.shape[:-1] + (n, n), dtype=yp.dtype)
    for k, (i, j) in enumerate(pack_indices(n)):
        out[..., i, j] = yp[..., k]
        out[..., j, i] = yp[..., k]
    return out


def quad_coeffs(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Coefficients c with ``yp . c = u^T Y w`` for packed symmetric Y."""
    n = u.shape[-1]
    return np.array(
        [
            u[i] * w[i] if i == j else u[i] * w[j] + u[j] * w[i]
            for i, j in pack_indices(n)
        ]
    )


# ----- state and evolution -----


@dataclass
class MarkovState:
    """Factor state at one time: ``x`` (n,), symmetric ``y`` (n, n), variance ``v``."""

    t: float
    x: np.ndarray
    y: np.ndarray
    v: float = 1.0


def initial_state(model: HjmModel) -> MarkovState:
    n = model.n_factors
    v0 = model.vol.v_bar if model.stochastic_vol else 1.0
    return MarkovState(0.0, np.zeros(n), np.zeros((n, n)), v0)


def evolve_state(
    model: HjmModel,
    state: MarkovState,
    dt: float,
    dw: np.ndarray,
    dz_v: float = 0.0,
) -> MarkovState:
    """One time step.

    Euler for ``x`` and ``v`` (full truncation: square-root arguments floored
    at zero), exact exponential decay for ``y`` holding ``v`` constant over
    the step.  ``dw`` and ``dz_v`` are Brownian increments over ``dt``.
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    a = model.a
    vp = max(state.v, 0.0)
    x_new = (
        state.x
        + (state.y.sum(axis=1) - a * state.x) * dt
        + math.sqrt(vp) * (model.R.T @ np.asarray(dw, float))
    )
    s = a[:, None] + a[None, :]
    decay = np.exp(-s * dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        ramp = np.where(s > 0.0, (1.0 - decay) / np.where(s > 0.0, s, 1.0), dt)
    y_new = state.y * decay + vp * model.cov_driver * ramp
    if model.stochastic_vol:
        p = model.vol
        v_new = (
            state.v
            + p.eta_v * (1.0 - vp) * dt
            + p.vol_of_vol(state.t) * math.sqrt(vp) * dz_v
        )
    else:
        v_new = 1.0
    return MarkovState(state.t + dt, x_new, y_new, v_new)


# ----- reconstruction of curves from the state -----
#
# xs has shape (..., n) and yp shape (..., K) with K = n(n+1)/2; both may be
# broadcast (a deterministic yp can carry a leading axis of 1).


def _exponent(xs, yp, grad, wvec):
    return np.asarray(xs) @ grad + np.asarray(yp) @ quad_coeffs(grad, wvec)


def libor_forward(model, curves: CurveSet, t, T, tenor, xs, yp):
    """Tenor forward ``F_t(T, tenor)`` reconstructed from the state at ``t``."""
    if T - tenor < t - 1e-12:
        raise ModelError("forward already fixed before state time")
    f0 = curves.forward_curve(tenor).forward(T)
    kappa = model.shift(tenor)
    if kappa + f0 <= 0:
        raise ModelError("initial forward violates the shift bound")
    grad = model.q_scale(tenor) * g0_integral(model.a, t, T - tenor, T)
    g0t = g0_integral(model.a, t, t, T)
    expo = _exponent(xs, yp, grad, g0t - 0.5 * grad)
    return (kappa + f0) * np.exp(expo) - kappa


def ois_forward(model, curves: CurveSet, t, T, tenor, xs, yp):
    """One-period collateral forward ``E_t(T, tenor)`` from the state at ``t``."""
    if T - tenor < t - 1e-12:
        raise ModelError("forward already fixed before state time")
    e0 = par_ois_rate(curves.discount, T, tenor)
    kappa = 1.0 / tenor
    grad = g0_integral(model.a, t, T - tenor, T)
    g0t = g0_integral(model.a, t, t, T)
    expo = _exponent(xs, yp, grad, g0t - 0.5 * grad)
    return (kappa + e0) * np.exp(expo) - kappa


def bond_price(model, curves: CurveSet, t, T, xs, yp):
    """Collateral discount bond ``P_t(T)`` from the state at ``t``."""
    if T < t - 1e-12:
        raise ModelError("bond maturity before state time")
    T = max(T, t)
    g0t = g0_integral(model.a, t, t, T)
    expo = -(np.asarray(xs) @ g0t) - 0.5 * (np.asarray(yp) @ quad_coeffs(g0t, g0t))
    ratio = curves.discount.discount(T) / curves.discount.discount(t)
    return ratio * np.exp(expo)


def forward_rate(model, curves: CurveSet, t, T, xs, yp):
    """Instantaneous forward ``f_t(T)`` from the state at ``t``."""
    g = g_decay(model.a, t, T)
    g0t = g0_integral(model.a, t, t, T)
    return (
        curves.discount.inst_forward(T)
        + np.asarray(xs) @ g
        + np.asarray(yp) @ quad_coeffs(g, g0t)
    )


def short_rate(curves: CurveSet, t, xs):
    """Bank-account rate ``e_t = f_0(t) + sum_i X_i``."""
    return curves.discount.inst_forward(t) + np.asarray(xs).sum(axis=-1)


def basis_spread(model, curves: CurveSet, t, x1, x2, xs, yp):
    """Spot basis between tenors ``x1 < x2``.

    Deterministic whenever the tenor loadings vanish and the shift equals the
    reciprocal tenor; genuinely stochastic for the ``mp`` family.
    """
    out = 0.0
    for tenor, sign in ((x2, 1.0), (x1, -1.0)):
        e = ois_forward(model, curves, t, t + tenor, tenor, xs, yp)
        f = libor_forward(model, curves, t, t + tenor, tenor, xs, yp)
        out = out + sign * np.log1p((e - f) / (1.0 / tenor + f)) / tenor
    return out
