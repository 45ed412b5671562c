"""Experiment runner: validated configs in, CSV artifacts out.

``run`` executes one experiment file and writes ``results/<name>/`` with a
normalized ``config_echo.yaml`` (re-running it reproduces the run byte for
byte), one CSV per sweep in basis points of notional, and a ``summary.txt``
with headline numbers and standard errors.  ``selfcheck`` exercises the
model-independent invariants of a config at reduced path counts.
``bootstrap`` prints the curve pillars implied by a market quote file.

Exit codes: 0 success; 2 configuration error, with the offending key path
named; 3 numerical failure or failed self-check.

Cure-period loss rates follow the all-at-close-out reading: a default in
``(u, u + delta]`` settles against the window-end portfolio value, coupons
inside the window capitalised at the realised collateral rate, and the
window default probability of the other party loads the own-intensity term.
"""

from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path

import numpy as np
import yaml

from .credit import (
    PRESETS,
    CirParams,
    CreditError,
    fit_cirpp,
    flat_hazard,
    load_hazard_csv,
)
from .engine import (
    EngineError,
    build_correlation,
    build_grid,
    simulate,
)
from .hjm import (
    StochVolParams,
    basis_spread,
    cheyette,
    hull_white,
    libor_forward,
    moreni_pallavicini,
)
from .products import (
    ProductError,
    basis_swap,
    irs,
    ois_swap,
    par_basis_spread,
    par_ois_rate_swap,
    par_swap_rate,
)
from .termstructures import (
    CurveError,
    CurveSet,
    DiscountCurve,
    ForwardCurve,
    bootstrap_discount_curve,
    bootstrap_forward_curve,
    load_quotes_csv,
)
from .xva import (
    CollateralSpec,
    XvaError,
    alpha_sweep,
    bilateral_adjustment,
    bilateral_adjustment_gap,
    wwr_sweep,
)

_TOL = 1e-9


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


# ----- config parsing -----


def _require_map(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must be a mapping")
    return obj


def _check_keys(block: dict, path: str, allowed, required=()):
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}" if path else f"unknown key {key}")
    for key in required:
        if key not in block:
            raise ConfigError(f"missing key {path}.{key}" if path else f"missing key {key}")


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number")
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer")
    return value


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path} must be true or false")
    return value


def _str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path} must be a string")
    return value


def _float_list(value, path: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path} must be a nonempty list of numbers")
    return [_float(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _parse_dt(value, path: str, strict: bool = True) -> float:
    """A number, or an exact fraction written as 'a/b'."""
    if isinstance(value, str):
        parts = value.split("/")
        try:
            if len(parts) == 2:
                num, den = float(parts[0]), float(parts[1])
                out = num / den
            else:
                out = float(value)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path} must be a number or a fraction like 1/12") from None
    else:
        out = _float(value, path)
    if strict and out <= 0:
        raise ConfigError(f"{path} must be positive")
    if not strict and out < 0:
        raise ConfigError(f"{path} must be nonnegative")
    return out


def _parse_curves(block, base_dir: Path) -> tuple:
    block = _require_map(block, "curves")
    _check_keys(block, "curves", ("quotes", "discount", "forwards"))
    if "quotes" in block:
        if "discount" in block or "forwards" in block:
            raise ConfigError("curves.quotes excludes curves.discount and curves.forwards")
        path = base_dir / _str(block["quotes"], "curves.quotes")
        try:
            ois, irs_by_tenor = load_quotes_csv(path)
            dc = bootstrap_discount_curve(ois)
            forwards = {
                tenor: bootstrap_forward_curve(tenor, dc, quotes)
                for tenor, quotes in irs_by_tenor.items()
            }
        except (OSError, CurveError) as err:
            raise ConfigError(f"curves.quotes: {err}") from err
        if not forwards:
            raise ConfigError("curves.quotes: file defines no forward-curve quotes")
        # absolute path so the echoed config re-runs from its own directory
        norm = {"quotes": str(path.resolve())}
        return CurveSet(dc, forwards), norm

    _check_keys(block, "curves", ("discount", "forwards"), ("discount", "forwards"))
    disc = _require_map(block["discount"], "curves.discount")
    _check_keys(disc, "curves.discount", ("flat",), ("flat",))
    dc = DiscountCurve.flat(_float(disc["flat"], "curves.discount.flat"))
    fwd_list = block["forwards"]
    if not isinstance(fwd_list, list) or not fwd_list:
        raise ConfigError("curves.forwards must be a nonempty list")
    forwards = {}
    norm_fwds = []
    for i, item in enumerate(fwd_list):
        path = f"curves.forwards[{i}]"
        item = _require_map(item, path)
        _check_keys(item, path, ("tenor", "flat", "pillars", "values"), ("tenor",))
        tenor = _float(item["tenor"], f"{path}.tenor")
        if tenor <= 0:
            raise ConfigError(f"{path}.tenor must be positive")
        if "flat" in item:
            if "pillars" in item or "values" in item:
                raise ConfigError(f"{path}.flat excludes pillars/values")
            level = _float(item["flat"], f"{path}.flat")
            curve = ForwardCurve.flat(tenor, level)
            norm_fwds.append({"tenor": tenor, "flat": level})
        else:
            if "pillars" not in item or "values" not in item:
                raise ConfigError(f"{path} needs flat, or pillars and values")
            pillars = _float_list(item["pillars"], f"{path}.pillars")
            values = _float_list(item["values"], f"{path}.values")
            try:
                curve = ForwardCurve(tenor, np.array(pillars), np.array(values))
            except CurveError as err:
                raise ConfigError(f"{path}: {err}") from err
            norm_fwds.append({"tenor": tenor, "pillars": pillars, "values": values})
        key = round(tenor, 9)
        if key in forwards:
            raise ConfigError(f"{path}.tenor repeats {tenor}")
        forwards[key] = curve
    return CurveSet(dc, forwards), {
        "discount": {"flat": float(dc.inst_forward(0.0))},
        "forwards": norm_fwds,
    }


_FAMILIES = {"hw": "hw", "ch": "cheyette", "mp": "mp"}


def _parse_model(block) -> tuple:
    block = _require_map(block, "model")
    _check_keys(
        block, "model", ("family", "a", "R", "vol", "eta_q", "gamma"), ("family", "a", "R")
    )
    fam_raw = _str(block["family"], "model.family").lower()
    if fam_raw not in _FAMILIES:
        raise ConfigError("model.family must be one of HW, CH, MP")
    family = _FAMILIES[fam_raw]
    a = _float_list(block["a"], "model.a")
    r_rows = block["R"]
    if not isinstance(r_rows, list) or len(r_rows) != len(a):
        raise ConfigError("model.R must be a square matrix matching model.a")
    r = [_float_list(row, f"model.R[{i}]") for i, row in enumerate(r_rows)]
    if any(len(row) != len(a) for row in r):
        raise ConfigError("model.R must be a square matrix matching model.a")
    norm = {"family": fam_raw.upper(), "a": a, "R": r}
    try:
        if family == "hw":
            for key in ("vol", "eta_q", "gamma"):
                if key in block:
                    raise ConfigError(f"model.{key} is not a HW parameter")
            return hull_white(a, r), norm
        vol_block = _require_map(block.get("vol"), "model.vol")
        _check_keys(
            vol_block, "model.vol",
            ("eta_v", "nu0", "nu1", "nu2", "v_bar", "rho_vw"), ("eta_v", "nu0"),
        )
        rho = vol_block.get("rho_vw", [0.0] * len(a))
        vol = StochVolParams(
            eta_v=_float(vol_block["eta_v"], "model.vol.eta_v"),
            nu0=_float(vol_block["nu0"], "model.vol.nu0"),
            nu1=_float(vol_block.get("nu1", 1.0), "model.vol.nu1"),
            nu2=_float(vol_block.get("nu2", 0.0), "model.vol.nu2"),
            v_bar=_float(vol_block.get("v_bar", 1.0), "model.vol.v_bar"),
            rho_vw=tuple(_float_list(rho, "model.vol.rho_vw")),
        )
        norm["vol"] = {
            "eta_v": vol.eta_v, "nu0": vol.nu0, "nu1": vol.nu1,
            "nu2": vol.nu2, "v_bar": vol.v_bar, "rho_vw": list(vol.rho_vw),
        }
        if family == "cheyette":
            for key in ("eta_q", "gamma"):
                if key in block:
                    raise ConfigError(f"model.{key} is not a CH parameter")
            return cheyette(a, r, vol), norm
        if "eta_q" not in block:
            raise ConfigError("missing key model.eta_q")
        eta_q = _float_list(block["eta_q"], "model.eta_q")
        gamma = _float(block.get("gamma", 0.0), "model.gamma")
        norm["eta_q"] = eta_q
        norm["gamma"] = gamma
        return moreni_pallavicini(a, r, vol, eta_q, gamma), norm
    except ConfigError:
        raise
    except ValueError as err:  # model factories validate their own domains
        raise ConfigError(f"model: {err}") from err


def _parse_one_credit(block, path: str, base_dir: Path) -> tuple:
    block = _require_map(block, path)
    _check_keys(block, path, ("preset", "params", "hazard", "flat_hazard", "hazard_csv"))
    if "preset" in block:
        if len(block) > 1:
            raise ConfigError(f"{path}.preset excludes the other keys")
        name = _str(block["preset"], f"{path}.preset")
        if name not in PRESETS:
            raise ConfigError(
                f"{path}.preset must be one of {', '.join(sorted(PRESETS))}"
            )
        return PRESETS[name](), {"preset": name}
    params_block = _require_map(block.get("params"), f"{path}.params")
    _check_keys(
        params_block, f"{path}.params", ("zeta", "mu", "nu", "y0"),
        ("zeta", "mu", "nu", "y0"),
    )
    params = CirParams(
        zeta=_float(params_block["zeta"], f"{path}.params.zeta"),
        mu=_float(params_block["mu"], f"{path}.params.mu"),
        nu=_float(params_block["nu"], f"{path}.params.nu"),
        y0=_float(params_block["y0"], f"{path}.params.y0"),
    )
    sources = [k for k in ("hazard", "flat_hazard", "hazard_csv") if k in block]
    if len(sources) != 1:
        raise ConfigError(f"{path} needs exactly one of hazard, flat_hazard, hazard_csv")
    norm: dict = {"params": dict(zeta=params.zeta, mu=params.mu, nu=params.nu, y0=params.y0)}
    try:
        if sources[0] == "hazard":
            hz = _require_map(block["hazard"], f"{path}.hazard")
            _check_keys(
                hz, f"{path}.hazard", ("pillars", "cum_hazards"), ("pillars", "cum_hazards")
            )
            pillars = _float_list(hz["pillars"], f"{path}.hazard.pillars")
            cum = _float_list(hz["cum_hazards"], f"{path}.hazard.cum_hazards")
            norm["hazard"] = {"pillars": pillars, "cum_hazards": cum}
            return fit_cirpp(params, pillars, cum), norm
        if sources[0] == "flat_hazard":
            fh = _require_map(block["flat_hazard"], f"{path}.flat_hazard")
            _check_keys(fh, f"{path}.flat_hazard", ("level", "horizon", "step"), ("level",))
            level = _float(fh["level"], f"{path}.flat_hazard.level")
            horizon = _float(fh.get("horizon", 15.0), f"{path}.flat_hazard.horizon")
            step = _float(fh.get("step", 1.0), f"{path}.flat_hazard.step")
            pillars, cum = flat_hazard(level, horizon, step)
            norm["flat_hazard"] = {"level": level, "horizon": horizon, "step": step}
            return fit_cirpp(params, pillars, cum), norm
        csv_rel = _str(block["hazard_csv"], f"{path}.hazard_csv")
        csv_path = (base_dir / csv_rel).resolve()
        pillars, cum = load_hazard_csv(csv_path)
        norm["hazard_csv"] = str(csv_path)
        return fit_cirpp(params, pillars, cum), norm
    except (OSError, CreditError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def _parse_credit(block, base_dir: Path) -> tuple:
    block = _require_map(block, "credit")
    _check_keys(
        block, "credit", ("investor", "counterparty"), ("investor", "counterparty")
    )
    inv, norm_i = _parse_one_credit(block["investor"], "credit.investor", base_dir)
    cpty, norm_c = _parse_one_credit(block["counterparty"], "credit.counterparty", base_dir)
    return inv, cpty, {"investor": norm_i, "counterparty": norm_c}


_KNOBS = ("rate_credit", "basis_credit")


def _parse_correlation(block) -> dict:
    if block is None:
        block = {}
    block = _require_map(block, "correlation")
    _check_keys(
        block, "correlation",
        ("credit_credit", "vol_credit", "knob", "knob_value", "knob_tenors"),
    )
    knob = block.get("knob")
    if knob is not None:
        knob = _str(knob, "correlation.knob")
        if knob not in _KNOBS:
            raise ConfigError(f"correlation.knob must be one of {', '.join(_KNOBS)}")
    tenors = _float_list(block.get("knob_tenors", [0.25, 0.5]), "correlation.knob_tenors")
    if len(tenors) != 2:
        raise ConfigError("correlation.knob_tenors must list two tenors")
    out = {
        "credit_credit": _float(block.get("credit_credit", 0.0), "correlation.credit_credit"),
        "vol_credit": _float(block.get("vol_credit", 0.0), "correlation.vol_credit"),
        "knob": knob,
        "knob_value": _float(block.get("knob_value", 0.0), "correlation.knob_value"),
        "knob_tenors": tenors,
        "_knob_value_given": "knob_value" in block,
    }
    return out


def _parse_collateral(block) -> CollateralSpec:
    if block is None:
        block = {}
    block = _require_map(block, "collateral")
    _check_keys(block, "collateral", ("alpha", "delta", "lgd_i", "lgd_c"))
    try:
        return CollateralSpec(
            alpha=_float(block.get("alpha", 1.0), "collateral.alpha"),
            delta=_parse_dt(block["delta"], "collateral.delta", strict=False)
            if "delta" in block
            else 0.0,
            lgd_i=_float(block.get("lgd_i", 0.6), "collateral.lgd_i"),
            lgd_c=_float(block.get("lgd_c", 0.6), "collateral.lgd_c"),
        )
    except XvaError as err:
        raise ConfigError(f"collateral: {err}") from err


def _parse_trade(block, curves: CurveSet) -> tuple:
    block = _require_map(block, "trade")
    kind = _str(block.get("kind", ""), "trade.kind").lower()
    try:
        if kind == "irs":
            _check_keys(
                block, "trade",
                ("kind", "notional", "maturity", "fixed_rate", "payer",
                 "float_tenor", "fixed_period"),
                ("kind", "notional", "maturity", "fixed_rate"),
            )
            notional = _float(block["notional"], "trade.notional")
            maturity = _float(block["maturity"], "trade.maturity")
            float_tenor = _float(block.get("float_tenor", 0.5), "trade.float_tenor")
            fixed_period = _float(block.get("fixed_period", 1.0), "trade.fixed_period")
            payer = _bool(block.get("payer", True), "trade.payer")
            raw_rate = block["fixed_rate"]
            if raw_rate == "par":
                rate = par_swap_rate(curves, maturity, float_tenor, fixed_period)
            else:
                rate = _float(raw_rate, "trade.fixed_rate")
            trade = irs(notional, maturity, rate, payer, float_tenor, fixed_period)
            norm = {
                "kind": "irs", "notional": notional, "maturity": maturity,
                "fixed_rate": raw_rate if raw_rate == "par" else rate,
                "payer": payer, "float_tenor": float_tenor, "fixed_period": fixed_period,
            }
        elif kind == "ois":
            _check_keys(
                block, "trade",
                ("kind", "notional", "maturity", "fixed_rate", "payer", "period"),
                ("kind", "notional", "maturity", "fixed_rate"),
            )
            notional = _float(block["notional"], "trade.notional")
            maturity = _float(block["maturity"], "trade.maturity")
            period = _float(block.get("period", 1.0), "trade.period")
            payer = _bool(block.get("payer", True), "trade.payer")
            raw_rate = block["fixed_rate"]
            if raw_rate == "par":
                rate = par_ois_rate_swap(curves, maturity, period)
            else:
                rate = _float(raw_rate, "trade.fixed_rate")
            trade = ois_swap(notional, maturity, rate, payer, period)
            norm = {
                "kind": "ois", "notional": notional, "maturity": maturity,
                "fixed_rate": raw_rate if raw_rate == "par" else rate,
                "payer": payer, "period": period,
            }
        elif kind == "basis":
            _check_keys(
                block, "trade",
                ("kind", "notional", "maturity", "spread", "payer",
                 "recv_tenor", "pay_tenor"),
                ("kind", "notional", "maturity", "spread"),
            )
            notional = _float(block["notional"], "trade.notional")
            maturity = _float(block["maturity"], "trade.maturity")
            recv_tenor = _float(block.get("recv_tenor", 0.25), "trade.recv_tenor")
            pay_tenor = _float(block.get("pay_tenor", 0.5), "trade.pay_tenor")
            payer = _bool(block.get("payer", False), "trade.payer")
            raw_spread = block["spread"]
            if raw_spread == "par":
                spread = par_basis_spread(curves, maturity, recv_tenor, pay_tenor)
            else:
                spread = _float(raw_spread, "trade.spread")
            trade = basis_swap(notional, maturity, spread, recv_tenor, pay_tenor, payer)
            norm = {
                "kind": "basis", "notional": notional, "maturity": maturity,
                "spread": raw_spread if raw_spread == "par" else spread,
                "payer": payer, "recv_tenor": recv_tenor, "pay_tenor": pay_tenor,
            }
        else:
            raise ConfigError("trade.kind must be one of irs, ois, basis")
    except (ProductError, CurveError) as err:
        raise ConfigError(f"trade: {err}") from err
    return trade, norm


def _parse_run(block) -> dict:
    block = _require_map(block, "run")
    _check_keys(
        block, "run", ("n_paths", "dt", "seed", "workers", "sweep"), ("n_paths",)
    )
    n_paths = _int(block["n_paths"], "run.n_paths")
    if n_paths <= 0:
        raise ConfigError("run.n_paths must be positive")
    dt_raw = block.get("dt", "1/12")
    out = {
        "n_paths": n_paths,
        "dt": dt_raw,
        "_dt": _parse_dt(dt_raw, "run.dt"),
        "seed": _int(block.get("seed", 0), "run.seed"),
        "workers": None,
        "sweep": None,
    }
    if out["seed"] < 0:
        raise ConfigError("run.seed must be nonnegative")
    if "workers" in block and block["workers"] is not None:
        out["workers"] = _int(block["workers"], "run.workers")
        if out["workers"] <= 0:
            raise ConfigError("run.workers must be positive")
    if "sweep" in block and block["sweep"] is not None:
        sw = _require_map(block["sweep"], "run.sweep")
        _check_keys(sw, "run.sweep", ("knob_values", "alphas"))
        if ("knob_values" in sw) == ("alphas" in sw):
            raise ConfigError("run.sweep needs exactly one of knob_values, alphas")
        if "knob_values" in sw:
            values = _float_list(sw["knob_values"], "run.sweep.knob_values")
            for i, v in enumerate(values):
                if abs(v) > 1.0:
                    raise ConfigError(
                        f"run.sweep.knob_values[{i}] must lie in [-1, 1]"
                    )
            out["sweep"] = {"knob_values": values}
        else:
            values = _float_list(sw["alphas"], "run.sweep.alphas")
            for i, v in enumerate(values):
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"run.sweep.alphas[{i}] must lie in [0, 1]")
            out["sweep"] = {"alphas": values}
    return out


class Experiment:
    """A fully validated experiment: parsed objects plus the normalized config."""

    def __init__(self, raw: dict, base_dir: Path):
        raw = _require_map(raw, "config")
        _check_keys(
            raw, "",
            ("name", "curves", "model", "credit", "correlation", "collateral",
             "trade", "run", "output"),
            ("name", "curves", "model", "credit", "trade", "run"),
        )
        self.name = _str(raw["name"], "name")
        if not self.name or "/" in self.name:
            raise ConfigError("name must be a nonempty directory-safe string")
        self.curves, norm_curves = _parse_curves(raw["curves"], base_dir)
        self.model, norm_model = _parse_model(raw["model"])
        self.credit_inv, self.credit_cpty, norm_credit = _parse_credit(
            raw["credit"], base_dir
        )
        self.correlation = _parse_correlation(raw.get("correlation"))
        self.collateral = _parse_collateral(raw.get("collateral"))
        self.trade, norm_trade = _parse_trade(raw["trade"], self.curves)
        self.run = _parse_run(raw["run"])
        self.output = _str(raw.get("output", "results"), "output")
        sweep = self.run["sweep"]
        if sweep and "knob_values" in sweep:
            if self.correlation["knob"] is None:
                raise ConfigError("run.sweep.knob_values needs correlation.knob")
            if self.correlation["_knob_value_given"]:
                raise ConfigError(
                    "correlation.knob_value conflicts with run.sweep.knob_values"
                )
        corr_norm = {k: v for k, v in self.correlation.items() if not k.startswith("_")}
        if sweep and "knob_values" in sweep:
            # the sweep owns the knob value; echoing one would conflict on re-run
            del corr_norm["knob_value"]
        self.normalized = {
            "name": self.name,
            "curves": norm_curves,
            "model": norm_model,
            "credit": norm_credit,
            "correlation": corr_norm,
            "collateral": {
                "alpha": self.collateral.alpha, "delta": self.collateral.delta,
                "lgd_i": self.collateral.lgd_i, "lgd_c": self.collateral.lgd_c,
            },
            "trade": norm_trade,
            "run": {k: v for k, v in self.run.items() if not k.startswith("_")},
            "output": self.output,
        }

    @property
    def dt(self) -> float:
        return self.run["_dt"]


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid YAML: {err}") from err
    if raw is None:
        raise ConfigError("config is empty")
    return raw


# ----- artifacts -----


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, rows, notional: float) -> None:
    scale = 1e4 / abs(notional)
    with open(path, "w", newline="") as fh:
        fh.write("knob_value,price,cva,dva,bilateral,se_bilateral\n")
        for knob_value, res in rows:
            fh.write(
                ",".join(
                    [
                        _fmt(knob_value),
                        _fmt(res.price * scale),
                        _fmt(res.cva * scale),
                        _fmt(res.dva * scale),
                        _fmt(res.bilateral * scale),
                        _fmt(res.se_bilateral * scale),
                    ]
                )
                + "\n"
            )


def _slope_fit(rows, notional: float):
    """OLS slope of bilateral (bp) against the sweep variable, with its SE."""
    xs = np.array([k for k, _ in rows])
    if np.unique(xs).size < 2:
        return None
    scale = 1e4 / abs(notional)
    ys = np.array([r.bilateral for _, r in rows]) * scale
    ses = np.array([r.se_bilateral for _, r in rows]) * scale
    xbar = xs.mean()
    sxx = float(np.sum((xs - xbar) ** 2))
    coef = (xs - xbar) / sxx
    slope = float(np.sum(coef * ys))
    slope_se = float(np.sqrt(np.sum(coef**2 * ses**2)))
    return slope, slope_se


def _martingale_check(exp: Experiment, horizon: float):
    """Discounted-bond error in SE units on a reduced-path simulation."""
    n = min(exp.run["n_paths"], 2000)
    grid = build_grid(horizon, dt=exp.dt)
    corr = build_correlation(
        exp.model,
        credit_credit=exp.correlation["credit_credit"],
        vol_credit=exp.correlation["vol_credit"],
        knob=exp.correlation["knob"],
        knob_value=exp.correlation["knob_value"],
        knob_tenors=tuple(exp.correlation["knob_tenors"]),
    )
    paths = simulate(
        exp.model, exp.curves, exp.credit_inv, exp.credit_cpty, corr, grid,
        n, exp.run["seed"] + 1000003, exp.run["workers"],
    )
    disc = paths.discount_to(grid.node_of(horizon))
    target = float(exp.curves.discount.discount(horizon))
    se = float(disc.std() / np.sqrt(disc.size))
    z = abs(float(disc.mean()) - target) / se
    return z, n


def run_experiment(exp: Experiment, out_root: Path, stream) -> None:
    out_dir = out_root / exp.name
    out_dir.mkdir(parents=True, exist_ok=True)

    z_mart, n_mart = _martingale_check(exp, exp.trade.maturity)
    if z_mart > 4.0:
        raise EngineError(
            f"martingale self-check failed: discount error {z_mart:.2f} SE "
            f"at T={exp.trade.maturity} with {n_mart} paths"
        )

    sweep = exp.run["sweep"]
    corr_cfg = exp.correlation
    if sweep and "knob_values" in sweep:
        sweep_label = f"knob {corr_cfg['knob']}"
        csv_name = "wwr_sweep.csv"
        rows = wwr_sweep(
            exp.trade, exp.model, exp.curves, exp.credit_inv, exp.credit_cpty,
            knob=corr_cfg["knob"], values=sweep["knob_values"],
            n_paths=exp.run["n_paths"], seed=exp.run["seed"],
            collateral=exp.collateral, dt=exp.dt,
            credit_credit=corr_cfg["credit_credit"],
            vol_credit=corr_cfg["vol_credit"],
            knob_tenors=tuple(corr_cfg["knob_tenors"]),
            workers=exp.run["workers"],
        )
    else:
        alphas = sweep["alphas"] if sweep else [exp.collateral.alpha]
        sweep_label = "collateral fraction" if sweep else "single point"
        csv_name = "alpha_sweep.csv" if sweep else "point.csv"
        grid = build_grid(
            exp.trade.maturity, dt=exp.dt, event_times=exp.trade.event_times(),
            delta=exp.collateral.delta,
        )
        corr = build_correlation(
            exp.model,
            credit_credit=corr_cfg["credit_credit"],
            vol_credit=corr_cfg["vol_credit"],
            knob=corr_cfg["knob"],
            knob_value=corr_cfg["knob_value"],
            knob_tenors=tuple(corr_cfg["knob_tenors"]),
        )
        paths = simulate(
            exp.model, exp.curves, exp.credit_inv, exp.credit_cpty, corr, grid,
            exp.run["n_paths"], exp.run["seed"], exp.run["workers"],
        )
        rows = alpha_sweep(exp.trade, paths, exp.curves, alphas, exp.collateral)

    _write_csv(out_dir / csv_name, rows, exp.trade.notional)
    (out_dir / "config_echo.yaml").write_text(
        yaml.safe_dump(exp.normalized, sort_keys=True)
    )

    scale = 1e4 / abs(exp.trade.notional)
    bilaterals = [r.bilateral * scale for _, r in rows]
    lines = [
        f"experiment: {exp.name}",
        f"model: {exp.model.family} ({exp.model.n_factors} factors)",
        f"trade: {exp.trade.kind} notional={_fmt(exp.trade.notional)} "
        f"maturity={_fmt(exp.trade.maturity)}",
        f"collateral: alpha={_fmt(exp.collateral.alpha)} delta={_fmt(exp.collateral.delta)} "
        f"lgd_i={_fmt(exp.collateral.lgd_i)} lgd_c={_fmt(exp.collateral.lgd_c)}",
        f"paths: {exp.run['n_paths']}  seed: {exp.run['seed']}  dt: {exp.run['dt']}",
        f"martingale_check: pass ({z_mart:.2f} SE at T={_fmt(exp.trade.maturity)}, "
        f"{n_mart} paths)",
        f"sweep: {sweep_label}, {len(rows)} points",
        f"price: {rows[0][1].price * scale:.4f} bp of notional",
        "bilateral adjustment by point (bp of notional):",
    ]
    for knob_value, res in rows:
        lines.append(
            f"  x={_fmt(knob_value)}  cva={res.cva * scale:.4f}  "
            f"dva={res.dva * scale:.4f}  bilateral={res.bilateral * scale:.4f}  "
            f"se={res.se_bilateral * scale:.4f}"
        )
    lines.append(
        f"bilateral_range_bp: [{min(bilaterals):.4f}, {max(bilaterals):.4f}]"
    )
    fit = _slope_fit(rows, exp.trade.notional)
    if fit is not None:
        slope, slope_se = fit
        lines.append(f"trend: slope {slope:.4f} bp per unit, se {slope_se:.4f}")
    text = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(text)
    stream.write(text)
    stream.write(f"artifacts in {out_dir}\n")


# ----- selfcheck -----


def _selfcheck(exp: Experiment, stream) -> bool:
    checks = []  # (name, ok, detail)

    corr = None
    try:
        corr = build_correlation(
            exp.model,
            credit_credit=exp.correlation["credit_credit"],
            vol_credit=exp.correlation["vol_credit"],
            knob=exp.correlation["knob"],
            knob_value=exp.correlation["knob_value"],
            knob_tenors=tuple(exp.correlation["knob_tenors"]),
        )
        corr.cholesky()
        detail = (
            f"repaired, distance {corr.repair_distance:.2e}" if corr.repaired else "clean"
        )
        checks.append(("correlation factorisation", True, detail))
    except EngineError as err:
        checks.append(("correlation factorisation", False, str(err)))

    paths = None
    if corr is not None:
        n = min(exp.run["n_paths"], 1500)
        grid = build_grid(
            exp.trade.maturity, dt=exp.dt, event_times=exp.trade.event_times()
        )
        try:
            paths = simulate(
                exp.model, exp.curves, exp.credit_inv, exp.credit_cpty, corr, grid,
                n, exp.run["seed"], exp.run["workers"],
            )
        except EngineError as err:
            checks.append(("simulation", False, str(err)))

    if paths is not None:
        horizon = exp.trade.maturity
        node_h = paths.grid.node_of(horizon)
        disc = paths.discount_to(node_h)
        target = float(exp.curves.discount.discount(horizon))
        se = float(disc.std() / np.sqrt(disc.size))
        z = abs(float(disc.mean()) - target) / se
        checks.append(
            ("martingale discount", z <= 4.0, f"{z:.2f} SE at T={horizon}")
        )

        for tenor in sorted(exp.curves.forwards):
            fix_time = horizon - tenor
            try:
                node_f = paths.grid.node_of(fix_time)
            except EngineError:
                continue
            xs, yp = paths.state_at(node_f)
            fixing = libor_forward(
                exp.model, exp.curves, fix_time, horizon, tenor, xs, yp
            )
            est = disc * fixing / target
            se_f = float(est.std() / np.sqrt(est.size))
            target_f = float(exp.curves.forward_curve(tenor).forward(horizon))
            z_f = abs(float(est.mean()) - target_f) / se_f
            checks.append(
                (
                    f"martingale forward x={tenor}",
                    z_f <= 4.0,
                    f"{z_f:.2f} SE at T={horizon}",
                )
            )

        tenors = sorted(exp.curves.forwards)
        if len(tenors) >= 2:
            x1, x2 = tenors[0], tenors[1]
            t_split = min(5.0, 0.5 * horizon)
            pos = int(np.argmin(np.abs(paths.grid.base_times - t_split)))
            node_s = int(paths.grid.base_idx[pos])
            t_at = float(paths.grid.times[node_s])
            xs, yp = paths.state_at(node_s)
            beta = basis_spread(exp.model, exp.curves, t_at, x1, x2, xs, yp)
            spread_std = float(np.std(np.asarray(beta)))
            if exp.model.family == "mp":
                ok = spread_std > 1e-9
                checks.append(
                    ("stochastic basis", ok, f"cross-path std {spread_std:.2e} at t={t_at}")
                )
            else:
                ok = spread_std < 1e-10
                checks.append(
                    ("deterministic", ok, f"cross-path std {spread_std:.2e} at t={t_at}")
                )

        full = CollateralSpec(alpha=1.0)
        res = bilateral_adjustment(exp.trade, paths, exp.curves, full)
        checks.append(
            (
                "full collateral zeroing",
                res.cva == 0.0 and res.dva == 0.0,
                f"cva={res.cva!r} dva={res.dva!r}",
            )
        )
        open_spec = CollateralSpec(alpha=min(exp.collateral.alpha, 1.0), delta=0.0)
        plain = bilateral_adjustment(exp.trade, paths, exp.curves, open_spec)
        gap = bilateral_adjustment_gap(exp.trade, paths, exp.curves, open_spec)
        checks.append(
            (
                "zero cure period equivalence",
                plain == gap,
                "gap valuation identical without windows",
            )
        )

    all_ok = True
    for name, ok, detail in checks:
        stream.write(f"{name}: {'pass' if ok else 'fail'} ({detail})\n")
        all_ok = all_ok and ok
    stream.write(
        f"selfcheck: {'all pass' if all_ok else 'FAILED'} ({len(checks)} checks)\n"
    )
    return all_ok


# ----- bootstrap report -----


def _bootstrap_report(quotes_path: Path, stream) -> None:
    try:
        ois, irs_by_tenor = load_quotes_csv(quotes_path)
    except (OSError, CurveError) as err:
        raise ConfigError(f"quotes: {err}") from err
    try:
        dc = bootstrap_discount_curve(ois)
    except CurveError as err:
        raise EngineError(f"discount bootstrap: {err}") from err
    stream.write("discount pillars\n")
    stream.write("maturity,discount,zero_rate\n")
    for t in dc.knots:
        if float(t) <= 0.0:
            continue
        p = float(dc.discount(t))
        stream.write(f"{_fmt(float(t))},{_fmt(p)},{_fmt(-np.log(p) / float(t))}\n")
    for tenor in sorted(irs_by_tenor):
        try:
            fc = bootstrap_forward_curve(tenor, dc, irs_by_tenor[tenor])
        except CurveError as err:
            raise EngineError(f"forward bootstrap x={tenor}: {err}") from err
        stream.write(f"forward pillars x={_fmt(tenor)}\n")
        stream.write("maturity,forward\n")
        for t, v in zip(fc.pillars, fc.values):
            stream.write(f"{_fmt(float(t))},{_fmt(float(v))}\n")


# ----- entry point -----


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mchjm",
        description="Multi-curve rate simulation and collateral-aware valuation "
        "adjustments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--paths", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_check = sub.add_parser("selfcheck", help="run config invariants at reduced paths")
    p_check.add_argument("config")
    p_boot = sub.add_parser("bootstrap", help="print curve pillars from a quote file")
    p_boot.add_argument("quotes")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.command == "bootstrap":
            _bootstrap_report(Path(args.quotes), out)
            return 0
        raw = load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        if args.command == "run":
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError("run.seed must be nonnegative")
                _require_map(raw.get("run"), "run")["seed"] = args.seed
            if args.paths is not None:
                if args.paths <= 0:
                    raise ConfigError("run.n_paths must be positive")
                _require_map(raw.get("run"), "run")["n_paths"] = args.paths
            if args.out is not None:
                raw["output"] = args.out
        exp = Experiment(raw, base_dir)
        if args.command == "selfcheck":
            return 0 if _selfcheck(exp, out) else 3
        run_experiment(exp, Path(exp.output), out)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (EngineError, XvaError, CurveError, CreditError, ProductError) as err:
        print(f"numerical failure ({type(err).__name__}): {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
