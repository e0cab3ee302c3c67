# -*- coding:UTF-8 -*-
import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, validator

from src.exponents import ProblemParams, compute_exponents
from utils.helpers import LabError


class TraceDomainError(LabError):
    pass


class BoundaryRegime(BaseModel):
    """
    Power trace f(t) = f0 * (T - t)^(-kappa) on the boundary, extended into the
    domain as f(t) * phi(d(x)) with a piecewise-linear cutoff phi: phi = 1 on the
    collar d <= w/2 and phi = 0 for d >= w.
    """
    kappa: float
    f0: float
    cutoff_width: float
    T: float
    one_sided: bool = False

    class Config:
        allow_mutation = False

    @validator("kappa")
    def _nonnegative_kappa(cls, value):
        if value < 0:
            raise ValueError("trace exponent kappa must be nonnegative")
        return value

    @validator("cutoff_width")
    def _cutoff_inside(cls, value):
        if not 0 < value < 0.5:
            raise ValueError("cutoff width must lie in (0, 1/2)")
        return value

    def cutoff(self, x):
        x = np.asarray(x, dtype=float)
        d = x if self.one_sided else np.minimum(x, 1.0 - x)
        w = self.cutoff_width
        return np.clip(2.0 * (w - d) / w, 0.0, 1.0)

    def boundary_values(self, t):
        value = float(dirichlet_trace(self, t))
        return value, (0.0 if self.one_sided else value)

    def initial_data(self, x):
        return float(dirichlet_trace(self, 0.0)) * self.cutoff(x)


def build_regime(regime_config, params: ProblemParams) -> BoundaryRegime:
    kappa = regime_config.kappa
    if kappa is None:
        exps = compute_exponents(params)
        kappa = exps.alpha / (params.q + 1) * (1.0 - regime_config.eps_cal)
    regime = BoundaryRegime(
        kappa=kappa,
        f0=regime_config.f0,
        cutoff_width=regime_config.cutoff_width,
        T=params.T,
        one_sided=regime_config.one_sided,
    )
    logger.info(f"boundary regime: kappa={regime.kappa:.6g}, f0={regime.f0:g}, "
                f"w={regime.cutoff_width:g}, one_sided={regime.one_sided}")
    return regime


def dirichlet_trace(regime: BoundaryRegime, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr >= regime.T):
        raise TraceDomainError(f"trace is defined on [0, T={regime.T:g}), got t={t}")
    values = regime.f0 * (regime.T - t_arr) ** (-regime.kappa)
    return float(values) if values.ndim == 0 else values


def trace_integral(regime: BoundaryRegime, t):
    # int_0^t f(tau) dtau
    t_arr = np.asarray(t, dtype=float)
    T, kappa = regime.T, regime.kappa
    if math.isclose(kappa, 1.0):
        return regime.f0 * np.log(T / (T - t_arr))
    return regime.f0 * (T ** (1 - kappa) - (T - t_arr) ** (1 - kappa)) / (1 - kappa)


def cutoff_integrals(width, p, q, one_sided=False):
    """
    I1 = int phi^(q+1) dx and I2 = int |phi'|^(p+1) dx for the piecewise-linear
    cutoff; the symmetric regime carries two collars.
    """
    collars = 1 if one_sided else 2
    i1 = collars * 0.5 * width * (q + 3) / (q + 2)
    i2 = collars * 2.0 ** p * width ** (-p)
    return i1, i2


def divergence_flags(regime: BoundaryRegime, params: ProblemParams) -> dict:
    kappa = regime.kappa
    return {
        "term1": kappa > 0,
        "term2": kappa * (params.p + 1) >= 1,
        "term3": kappa >= 1,
    }


def energy_budget(regime: BoundaryRegime, params: ProblemParams, t) -> dict:
    """
    Closed-form budget F(t) of the product extension f(t) * phi(x):
    term1 = sup_tau int |f|^(q+1), term2 = int_0^t int |grad f|^(p+1),
    term3 = I1 * (int_0^t f)^(q+1). Returns the terms, their sum and
    omega0_eff = max over the given t of F(t) * (T - t)^alpha.
    """
    p, q, T = params.p, params.q, regime.T
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0) or np.any(t_arr >= T):
        raise TraceDomainError(f"budget is defined on [0, T={T:g})")
    i1, i2 = cutoff_integrals(regime.cutoff_width, p, q, regime.one_sided)
    f0, kappa = regime.f0, regime.kappa

    term1 = i1 * dirichlet_trace(regime, t_arr) ** (q + 1)
    m = kappa * (p + 1)
    if math.isclose(m, 1.0):
        time_part = np.log(T / (T - t_arr))
    else:
        time_part = ((T - t_arr) ** (1 - m) - T ** (1 - m)) / (m - 1)
    term2 = i2 * f0 ** (p + 1) * time_part
    term3 = i1 * np.asarray(trace_integral(regime, t_arr)) ** (q + 1)
    total = term1 + term2 + term3

    alpha = params.critical_exponent() - params.beta
    weighted = total * (T - t_arr) ** alpha
    return {
        "t": t_arr,
        "term1": term1,
        "term2": term2,
        "term3": term3,
        "F": total,
        "omega0_eff": float(np.max(weighted)) if weighted.size else 0.0,
        "divergent": divergence_flags(regime, params),
    }


def budget_table(regime: BoundaryRegime, params: ProblemParams, t_grid):
    budget = energy_budget(regime, params, t_grid)
    columns = {
        "t": budget["t"],
        "term1": budget["term1"],
        "term2": budget["term2"],
        "term3": budget["term3"],
        "F": budget["F"],
        "omega0_eff": np.full(budget["t"].shape, budget["omega0_eff"]),
    }
    dominant = max(("term1", "term2", "term3"), key=lambda name: budget[name][-1])
    logger.info(f"energy budget: omega0_eff={budget['omega0_eff']:.6g}, dominant term at "
                f"t={budget['t'][-1]:.6g} is {dominant}")
    return columns, budget["divergent"]


def effective_beta(regime: BoundaryRegime, params: ProblemParams) -> float:
    # LS-window exponent realized by the trace: F ~ (T-t)^-((q+1)/(p-q) - beta_eff)
    return params.critical_exponent() - regime.kappa * (params.q + 1)
