"""Correlated Monte Carlo engine.

Drivers are ordered ``(W_1..W_N, Z_v, Z_I, Z_C)``: factor shocks, variance
shock, investor and counterparty intensity shocks.  Every path owns a
counter-based random stream keyed by ``(seed, path index)``, so path ``i`` is
the same no matter how paths are split across blocks or worker threads; paths
are processed in fixed-size blocks and written into disjoint slices of the
preallocated output arrays, making results bit-identical for any worker
count.

Integrals along paths use the trapezoid rule for the stochastic layer while
the deterministic layer (initial forwards, intensity shift) is integrated in
closed form from the curves, which keeps discretisation bias out of the
deterministic part of the numeraire.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .credit import CirPP, evolve_intensity
from .hjm import HjmModel, g0_integral, pack_indices
from .termstructures import CurveSet


class EngineError(ValueError):
    """Invalid engine configuration or inputs."""


_BLOCK = 4096  # paths per processing block; fixed so scheduling never changes results
_MERGE_TOL = 1e-9

WORKERS_ENV = "MCHJM_WORKERS"


def resolve_workers(explicit=None) -> int:
    """Worker count: explicit argument, else environment override, else 1."""
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


# ----- correlation -----


def driver_labels(n_factors: int):
    return [f"W{i + 1}" for i in range(n_factors)] + ["Zv", "ZI", "ZC"]


@dataclass
class CorrelationSpec:
    """Full driver correlation matrix with positive-semidefinite repair.

    A slightly indefinite input (from composing named entries) is repaired by
    clipping negative eigenvalues and renormalising the diagonal; the
    Frobenius distance moved is recorded so callers can report it.
    """

    matrix: np.ndarray
    n_factors: int
    repaired: bool = field(default=False)
    repair_distance: float = field(default=0.0)

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, float))
        d = self.n_factors + 3
        if m.shape != (d, d):
            raise EngineError(
                f"correlation matrix must be {d}x{d} for {self.n_factors} factors"
            )
        if np.max(np.abs(m - m.T)) > 1e-10:
            raise EngineError("correlation matrix must be symmetric")
        if np.max(np.abs(np.diag(m) - 1.0)) > 1e-10:
            raise EngineError("correlation matrix must have a unit diagonal")
        if np.max(np.abs(m)) > 1.0 + 1e-10:
            raise EngineError("correlations must lie in [-1, 1]")
        m = 0.5 * (m + m.T)
        eigvals = np.linalg.eigvalsh(m)
        if eigvals[0] < -1e-10:
            w, vec = np.linalg.eigh(m)
            fixed = (vec * np.maximum(w, 0.0)) @ vec.T
            scale = 1.0 / np.sqrt(np.diag(fixed))
            fixed = fixed * scale[:, None] * scale[None, :]
            self.repaired = True
            self.repair_distance = float(np.linalg.norm(fixed - m))
            m = 0.5 * (fixed + fixed.T)
        self.matrix = m

    def cholesky(self) -> np.ndarray:
        m = self.matrix
        for jitter in (0.0, 1e-12, 1e-10, 1e-8):
            try:
                d = m.shape[0]
                adj = (m + jitter * np.eye(d)) / (1.0 + jitter)
                return np.linalg.cholesky(adj)
            except np.linalg.LinAlgError:
                continue
        raise EngineError("correlation matrix is not factorisable")


def rate_credit_direction(model: HjmModel) -> np.ndarray:
    """Unit combination of factor shocks moving intensities with deal value.

    The bank-account rate loads on the factor shocks through the row sums of
    the loading matrix.  The returned direction is the *negative* of that
    combination, so a positive knob value associates high default intensities
    with falling rates -- the direction in which a receive-fixed swap gains.
    """
    s = model.R.sum(axis=1)
    norm = np.linalg.norm(s)
    if norm < 1e-14:
        raise EngineError("degenerate loading matrix for rate-credit knob")
    return -s / norm


def basis_credit_direction(model: HjmModel, x1: float, x2: float) -> np.ndarray:
    """Unit combination of factor shocks driving the ``x1``/``x2`` basis.

    Uses the state gradient of the spot basis (tenor-loading weighted factor
    difference) mapped through the loading matrix.  Families without tenor
    loadings have a deterministic basis, so there is nothing for credit to
    correlate with: the direction is zero and the knob leaves the correlation
    matrix unchanged at every knob value.
    """
    grad = np.zeros(model.n_factors)
    for tenor, sign in ((x2, 1.0), (x1, -1.0)):
        g0x = g0_integral(model.a, 0.0, 0.0, tenor)
        grad += sign / tenor * (1.0 - model.q_scale(tenor)) * g0x
    c = model.R @ grad
    norm = np.linalg.norm(c)
    if norm < 1e-12:
        return np.zeros(model.n_factors)
    return c / norm


def build_correlation(
    model: HjmModel,
    credit_credit: float = 0.0,
    vol_credit: float = 0.0,
    knob: str | None = None,
    knob_value: float = 0.0,
    knob_tenors=(0.25, 0.5),
) -> CorrelationSpec:
    """Assemble the driver correlation matrix from named entries.

    The vol-rate correlations come from the model's variance parameters.  The
    experiment knob models each credit shock as the knob value times a
    model-implied market combination plus an independent residual (see
    :func:`rate_credit_direction` / :func:`basis_credit_direction`); the
    vol-credit and credit-credit entries pick up the induced terms, with the
    configured values applying to the residual shock.
    """
    n = model.n_factors
    d = n + 3
    m = np.eye(d)
    iv, ii, ic = n, n + 1, n + 2
    if model.stochastic_vol and model.vol.rho_vw:
        rho_vw = np.asarray(model.vol.rho_vw, float)
        m[:n, iv] = m[iv, :n] = rho_vw
    m[ii, ic] = m[ic, ii] = credit_credit
    m[iv, ii] = m[ii, iv] = vol_credit
    m[iv, ic] = m[ic, iv] = vol_credit
    if knob is not None:
        if knob == "rate_credit":
            direction = rate_credit_direction(model)
        elif knob == "basis_credit":
            direction = basis_credit_direction(model, *knob_tenors)
        else:
            raise EngineError(f"unknown correlation knob {knob!r}")
        loaded = knob_value * knob_value * float(direction @ direction)
        resid = np.sqrt(max(1.0 - loaded, 0.0))
        col = knob_value * direction
        m[:n, ii] = m[ii, :n] = col
        m[:n, ic] = m[ic, :n] = col
        induced_v = 0.0
        if model.stochastic_vol and model.vol.rho_vw:
            induced_v = knob_value * float(
                np.asarray(model.vol.rho_vw, float) @ direction
            )
        vcol = induced_v + resid * vol_credit
        m[iv, ii] = m[ii, iv] = vcol
        m[iv, ic] = m[ic, iv] = vcol
        m[ii, ic] = m[ic, ii] = loaded + resid * resid * credit_credit
    return CorrelationSpec(m, n)


# ----- simulation grid -----


@dataclass
class SimGrid:
    """Node times plus bookkeeping for valuation and cure-period lookups.

    ``base_idx`` marks the valuation nodes (uniform grid, trade events and the
    horizon); for ``delta > 0`` each valuation node ``u`` has its ``u + delta``
    partner at ``fwd_idx`` in the full node array.
    """

    times: np.ndarray
    base_idx: np.ndarray
    fwd_idx: np.ndarray | None
    delta: float

    @property
    def n_nodes(self) -> int:
        return self.times.size

    @property
    def base_times(self) -> np.ndarray:
        return self.times[self.base_idx]

    def node_of(self, t: float) -> int:
        j = int(np.searchsorted(self.times, t))
        for cand in (j, j - 1, j + 1):
            if 0 <= cand < self.times.size and abs(self.times[cand] - t) <= _MERGE_TOL:
                return cand
        raise EngineError(f"time {t} is not a grid node")


def _merge_sorted(values: np.ndarray) -> np.ndarray:
    values = np.sort(values)
    keep = [values[0]]
    for val in values[1:]:
        if val - keep[-1] > _MERGE_TOL:
            keep.append(val)
    return np.array(keep)


def build_grid(horizon: float, dt: float = 1.0 / 12, event_times=(), delta: float = 0.0) -> SimGrid:
    if horizon <= 0 or dt <= 0:
        raise EngineError("horizon and dt must be positive")
    if delta < 0:
        raise EngineError("cure period must be nonnegative")
    n_uniform = int(math.ceil(horizon / dt - _MERGE_TOL))
    base = [dt * k for k in range(n_uniform + 1) if dt * k <= horizon + _MERGE_TOL]
    base.append(horizon)
    base.extend(t for t in event_times if 0.0 <= t <= horizon + _MERGE_TOL)
    base = _merge_sorted(np.asarray(base, float))
    if delta > 0.0:
        times = _merge_sorted(np.concatenate([base, base + delta]))
    else:
        times = base

    def locate(targets):
        idx = np.searchsorted(times, targets - _MERGE_TOL)
        idx = np.minimum(idx, times.size - 1)
        if np.max(np.abs(times[idx] - targets)) > 2 * _MERGE_TOL:
            raise EngineError("grid assembly lost a node")
        return idx

    base_idx = locate(base)
    fwd_idx = locate(base + delta) if delta > 0.0 else None
    return SimGrid(times, base_idx, fwd_idx, delta)


# ----- path container -----


_MAGIC = b"MCPS"
_VERSION = 1


@dataclass
class PathSet:
    """Simulated states and integrals on the grid.

    ``x`` is ``(paths, nodes, factors)``; ``yp`` packs the symmetric convexity
    matrix (leading axis 1 when the variance is deterministic, since the
    matrix is then path-independent); ``int_e`` and the hazard integrals
    accumulate from time zero.
    """

    grid: SimGrid
    model: HjmModel
    seed: int
    x: np.ndarray
    yp: np.ndarray
    v: np.ndarray
    e: np.ndarray
    int_e: np.ndarray
    lam_i: np.ndarray
    lam_c: np.ndarray
    int_lam_i: np.ndarray
    int_lam_c: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    def state_at(self, node: int):
        """Factor and convexity slices at one node, broadcastable over paths."""
        return self.x[:, node, :], self.yp[:, node, :]

    def discount_to(self, node: int) -> np.ndarray:
        """Pathwise collateral-account discount ``exp(-int_0^t e)``."""
        return np.exp(-self.int_e[:, node])

    def save(self, path) -> None:
        """Versioned little-endian dump, one row-major record per path."""
        m = self.grid.n_nodes
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<IIQQdI",
                    _VERSION,
                    self.model.n_factors,
                    self.n_paths,
                    m,
                    self.grid.delta,
                    self.grid.base_idx.size,
                )
            )
            fh.write(self.grid.times.astype("<f8").tobytes())
            fh.write(self.grid.base_idx.astype("<i8").tobytes())
            fwd = self.grid.fwd_idx if self.grid.fwd_idx is not None else np.array([], np.int64)
            fh.write(struct.pack("<I", fwd.size))
            fh.write(np.asarray(fwd, np.int64).astype("<i8").tobytes())
            yp_full = np.broadcast_to(self.yp, (self.n_paths,) + self.yp.shape[1:])
            v_full = np.broadcast_to(self.v, (self.n_paths, m))
            for p in range(self.n_paths):
                rec = np.concatenate(
                    [
                        self.x[p].ravel(),
                        yp_full[p].ravel(),
                        v_full[p],
                        self.e[p],
                        self.int_e[p],
                        self.lam_i[p],
                        self.lam_c[p],
                        self.int_lam_i[p],
                        self.int_lam_c[p],
                    ]
                )
                fh.write(rec.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, model: HjmModel, seed: int = 0) -> "PathSet":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise EngineError("not a path-set file")
            version, n, n_paths, m, delta, n_base = struct.unpack(
                "<IIQQdI", fh.read(struct.calcsize("<IIQQdI"))
            )
            if version != _VERSION:
                raise EngineError(f"unsupported path-set version {version}")
            if n != model.n_factors:
                raise EngineError("factor count mismatch against model")
            times = np.frombuffer(fh.read(8 * m), "<f8").copy()
            base_idx = np.frombuffer(fh.read(8 * n_base), "<i8").copy()
            (n_fwd,) = struct.unpack("<I", fh.read(4))
            fwd = np.frombuffer(fh.read(8 * n_fwd), "<i8").copy() if n_fwd else None
            grid = SimGrid(times, base_idx, fwd, delta)
            k = n * (n + 1) // 2
            rec_len = m * (n + k + 7)
            raw = np.frombuffer(fh.read(8 * rec_len * n_paths), "<f8").reshape(
                n_paths, rec_len
            )
            pos = 0

            def take(width):
                nonlocal pos
                out = raw[:, pos : pos + m * width]
                pos += m * width
                return out.reshape(n_paths, m, width) if width > 1 else out.reshape(n_paths, m)

            x = take(n).copy()
            yp = take(k).copy()
            v = take(1).copy()
            e = take(1).copy()
            int_e = take(1).copy()
            lam_i = take(1).copy()
            lam_c = take(1).copy()
            int_lam_i = take(1).copy()
            int_lam_c = take(1).copy()
        return cls(grid, model, seed, x, yp, v, e, int_e, lam_i, lam_c, int_lam_i, int_lam_c)


# ----- simulation -----


def _path_normals(seed: int, first_path: int, count: int, shape) -> np.ndarray:
    """Standard normals, one counter-based stream per path."""
    out = np.empty((count,) + shape)
    for i in range(count):
        bit_gen = np.random.Philox(key=np.array([seed, first_path + i], dtype=np.uint64))
        out[i] = np.random.Generator(bit_gen).standard_normal(shape)
    return out


def _credit_terms(cirpp: CirPP | None, times: np.ndarray):
    if cirpp is None:
        zero = np.zeros(times.size)
        return None, zero, zero
    return cirpp.params, cirpp.shift.value(times), cirpp.shift.integral(times)


def simulate(
    model: HjmModel,
    curves: CurveSet,
    credit_inv: CirPP | None,
    credit_cpty: CirPP | None,
    corr: CorrelationSpec,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    workers: int | None = None,
) -> PathSet:
    """Generate a :class:`PathSet` under the collateral-account measure.

    A ``None`` credit model pins that party's intensity at zero.  The driver
    draws are unchanged, so rate paths agree bit for bit with and without
    credit for the same seed.
    """
    if n_paths <= 0:
        raise EngineError("need a positive path count")
    if not (0 <= seed < 2**63):
        raise EngineError("seed must fit in a signed 64-bit integer")
    if corr.n_factors != model.n_factors:
        raise EngineError("correlation spec factor count mismatch")
    n = model.n_factors
    k = n * (n + 1) // 2
    d = n + 3
    times = grid.times
    m = times.size
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise EngineError("grid times must strictly increase")
    sq_dts = np.sqrt(dts)
    chol = corr.cholesky()

    # deterministic layers, integrated in closed form
    dc = curves.discount
    f0_nodes = dc.inst_forward(times)
    int_f0 = -dc.log_discount(times)
    par_i, psi_i, int_psi_i = _credit_terms(credit_inv, times)
    par_c, psi_c, int_psi_c = _credit_terms(credit_cpty, times)

    # per-step decay/ramp for the convexity update
    pairs = pack_indices(n)
    s_packed = np.array([model.a[i] + model.a[j] for i, j in pairs])
    c_packed = np.array([model.cov_driver[i, j] for i, j in pairs])
    decay_steps = np.exp(-np.outer(dts, s_packed))
    with np.errstate(divide="ignore", invalid="ignore"):
        ramp_steps = np.where(
            s_packed > 0.0,
            (1.0 - decay_steps) / np.where(s_packed > 0.0, s_packed, 1.0),
            dts[:, None],
        )
    # packed entry (i, j) contributes Y_ij to the row sums of rows i and j,
    # once only when i == j
    row_map = np.zeros((k, n))
    for idx, (i, j) in enumerate(pairs):
        row_map[idx, i] = 1.0
        row_map[idx, j] = 1.0

    stoch_v = model.stochastic_vol
    v0 = model.vol.v_bar if stoch_v else 1.0
    nu_nodes = (
        np.array([model.vol.vol_of_vol(t) for t in times]) if stoch_v else None
    )

    yp_det = None
    if not stoch_v:
        yp_det = np.zeros((1, m, k))
        cur = np.zeros(k)
        for step in range(m - 1):
            cur = cur * decay_steps[step] + c_packed * ramp_steps[step]
            yp_det[0, step + 1] = cur

    paths = PathSet(
        grid=grid,
        model=model,
        seed=seed,
        x=np.zeros((n_paths, m, n)),
        yp=yp_det if yp_det is not None else np.zeros((n_paths, m, k)),
        v=np.ones((1, m)) if not stoch_v else np.empty((n_paths, m)),
        e=np.empty((n_paths, m)),
        int_e=np.empty((n_paths, m)),
        lam_i=np.empty((n_paths, m)),
        lam_c=np.empty((n_paths, m)),
        int_lam_i=np.empty((n_paths, m)),
        int_lam_c=np.empty((n_paths, m)),
    )

    def run_block(first: int, last: int) -> None:
        b = last - first
        z = _path_normals(seed, first, b, (m - 1, d))
        z = z @ chol.T
        x_cur = np.zeros((b, n))
        yp_cur = np.zeros((b, k)) if stoch_v else None
        v_cur = np.full(b, v0)
        yi = np.full(b, par_i.y0 if par_i is not None else 0.0)
        yc = np.full(b, par_c.y0 if par_c is not None else 0.0)
        stoch_e = np.zeros(b)  # sum of factors, the stochastic part of e
        int_stoch_e = np.zeros(b)
        int_yi = np.zeros(b)
        int_yc = np.zeros(b)

        sl = slice(first, last)
        paths.x[sl, 0] = 0.0
        paths.e[sl, 0] = f0_nodes[0]
        paths.int_e[sl, 0] = 0.0
        paths.lam_i[sl, 0] = yi + psi_i[0]
        paths.lam_c[sl, 0] = yc + psi_c[0]
        paths.int_lam_i[sl, 0] = 0.0
        paths.int_lam_c[sl, 0] = 0.0
        if stoch_v:
            paths.yp[sl, 0] = 0.0
            paths.v[sl, 0] = v0

        for step in range(m - 1):
            dt = dts[step]
            shocks = z[:, step, :] * sq_dts[step]
            dw = shocks[:, :n]
            vp = np.maximum(v_cur, 0.0)
            sqv = np.sqrt(vp)

            yp_at = yp_cur if stoch_v else yp_det[0, step]
            drift = (yp_at @ row_map) - model.a * x_cur
            x_cur = x_cur + drift * dt + sqv[:, None] * (dw @ model.R)

            if stoch_v:
                yp_cur = yp_cur * decay_steps[step] + vp[:, None] * (
                    c_packed * ramp_steps[step]
                )
                p = model.vol
                v_cur = (
                    v_cur
                    + p.eta_v * (1.0 - vp) * dt
                    + nu_nodes[step] * sqv * shocks[:, n]
                )

            yi_new = (
                evolve_intensity(par_i, yi, dt, shocks[:, n + 1])
                if par_i is not None
                else yi
            )
            yc_new = (
                evolve_intensity(par_c, yc, dt, shocks[:, n + 2])
                if par_c is not None
                else yc
            )

            stoch_e_new = x_cur.sum(axis=1)
            int_stoch_e += 0.5 * (stoch_e + stoch_e_new) * dt
            int_yi += 0.5 * (yi + yi_new) * dt
            int_yc += 0.5 * (yc + yc_new) * dt
            stoch_e = stoch_e_new
            yi, yc = yi_new, yc_new

            node = step + 1
            paths.x[sl, node] = x_cur
            paths.e[sl, node] = f0_nodes[node] + stoch_e
            paths.int_e[sl, node] = int_f0[node] + int_stoch_e
            paths.lam_i[sl, node] = yi + psi_i[node]
            paths.lam_c[sl, node] = yc + psi_c[node]
            paths.int_lam_i[sl, node] = int_psi_i[node] + int_yi
            paths.int_lam_c[sl, node] = int_psi_c[node] + int_yc
            if stoch_v:
                paths.yp[sl, node] = yp_cur
                paths.v[sl, node] = v_cur

    blocks = [(p0, min(p0 + _BLOCK, n_paths)) for p0 in range(0, n_paths, _BLOCK)]
    n_workers = resolve_workers(workers)
    if n_workers <= 1 or len(blocks) <= 1:
        for first, last in blocks:
            run_block(first, last)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda blk: run_block(*blk), blocks))
    return paths


def correlated_increments(seed: int, n_paths: int, n_steps: int, corr: CorrelationSpec):
    """Correlated standard-normal driver increments, as the simulator draws them.

    Exposed for statistical validation of the correlation wiring.
    """
    d = corr.n_factors + 3
    z = _path_normals(seed, 0, n_paths, (n_steps, d))
    return z @ corr.cholesky().T
