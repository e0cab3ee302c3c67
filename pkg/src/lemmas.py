# -*- coding:UTF-8 -*-
import math
from typing import List

import numpy as np
from loguru import logger
from pydantic import BaseModel, root_validator, validator
from scipy.optimize import brentq
from tqdm import tqdm

from src.exponents import ParameterError
from utils.helpers import LabError, geometric_grid, loglog_fit


class StiffStep(LabError):
    pass


def stampacchia_bound(a, rho, lam):
    """f(s+d) <= a d^-rho f(s)^lam on (0, s0) implies f(s) <= C s^-e with
    C = 2^(rho/(lam(1-lam)^2)) a^(1/(1-lam)), e = rho/(1-lam)."""
    if not 0 < lam < 1:
        raise ParameterError(f"lambda must lie in (0, 1), got {lam}")
    if a <= 0 or rho <= 0:
        raise ParameterError(f"a and rho must be positive, got a={a}, rho={rho}")
    coefficient = 2.0 ** (rho / (lam * (1 - lam) ** 2)) * a ** (1.0 / (1 - lam))
    return coefficient, rho / (1 - lam)


class StampacchiaInput(BaseModel):
    a: float
    rho: float
    lam: float
    s0: float
    s: List[float]
    f: List[float]

    @root_validator(skip_on_failure=True)
    def _table_shape(cls, values):
        s, f = values["s"], values["f"]
        if len(s) != len(f):
            raise ValueError("s and f tables differ in length")
        if any(b <= a for a, b in zip(s[:-1], s[1:])):
            raise ValueError("s table must be strictly increasing")
        if any(v < 0 for v in f) or any(b > a * (1 + 1e-12) for a, b in zip(f[:-1], f[1:])):
            raise ValueError("f must be nonnegative and nonincreasing")
        return values


def stampacchia_check(inp: StampacchiaInput, rtol=1e-9) -> dict:
    s = np.asarray(inp.s)
    f = np.asarray(inp.f)
    inside = (s > 0) & (s <= inp.s0)
    s, f = s[inside], f[inside]
    coefficient, exponent = stampacchia_bound(inp.a, inp.rho, inp.lam)

    i, k = np.triu_indices(s.size, k=1)
    gap = s[k] - s[i]
    lhs = f[k]
    rhs = inp.a * gap ** (-inp.rho) * f[i] ** inp.lam
    premise_ok = lhs <= rhs * (1 + rtol)
    bound = coefficient * s ** (-exponent)
    bound_ok = f <= bound * (1 + rtol)
    with np.errstate(divide="ignore", invalid="ignore"):
        premise_ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return {
        "premise_holds": bool(np.all(premise_ok)),
        "bound_holds": bool(np.all(bound_ok)),
        "premise_violations": int(np.count_nonzero(~premise_ok)),
        "worst_premise_ratio": float(np.max(premise_ratio)) if premise_ratio.size else 0.0,
        "worst_bound_ratio": float(np.max(f / bound)) if f.size else 0.0,
        "coefficient": coefficient,
        "exponent": exponent,
        "n_points": int(s.size),
    }


def power_table(scale, power, s_lo, s0, per_decade=32):
    s = geometric_grid(s_lo, s0, per_decade)
    return s, scale * s ** (-power)


def minimal_premise_constant(s, f, rho, lam):
    # smallest a making f(s+d) <= a d^-rho f(s)^lam hold on the table
    s, f = np.asarray(s), np.asarray(f)
    i, k = np.triu_indices(s.size, k=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = f[k] * (s[k] - s[i]) ** rho / f[i] ** lam
    need = need[np.isfinite(need)]
    return float(np.max(need)) if need.size else 0.0


class Lemma926Input(BaseModel):
    c1: float
    c2: float
    c3: float
    delta: float
    gamma1: float
    gamma2: float
    lam: float
    eps: List[float]

    @validator("c1", "c2")
    def _positive_constant(cls, value):
        if value <= 0:
            raise ValueError("c1, c2 must be positive")
        return value

    @validator("c3")
    def _nonnegative_start(cls, value):
        # c3 = 0 gives the zero family
        if value < 0:
            raise ValueError("c3 must be nonnegative")
        return value

    @validator("delta", "lam")
    def _unit_interval(cls, value):
        if not 0 < value < 1:
            raise ValueError("delta and lambda must lie in (0, 1)")
        return value

    @root_validator(skip_on_failure=True)
    def _ordering(cls, values):
        if not values["gamma2"] > values["gamma1"] > 0:
            raise ValueError("need gamma2 > gamma1 > 0")
        eps = values["eps"]
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps[:-1], eps[1:])):
            raise ValueError("eps sequence must be positive and strictly decreasing")
        return values

    @property
    def j0(self):
        return len(self.eps)

    def envelope_exponent(self):
        return (1 + self.gamma1) * (1 - self.delta) / (self.delta * self.gamma1)


def lemma_s_grid(s_min=1e-9, s0=1.0, per_decade=60):
    return np.concatenate(([0.0], geometric_grid(s_min, s0, per_decade)))


def _slope(value, previous, lam, branches):
    # -M' resolving M = lam M_prev + (1-lam) max_i k_i (-M')^(1+g_i)
    excess = value - lam * previous
    if excess <= 0:
        return 0.0
    return min((excess / ((1 - lam) * k)) ** (1.0 / (1 + g)) for k, g in branches)


def lemma926_propagate(inp: Lemma926Input, s_grid) -> np.ndarray:
    """
    Extremal family: equality version of the layer system, M_j(0) = K_j,
    integrated in s with an implicit trapezoid step. Returns array (j0, len(s_grid)).
    """
    s_grid = np.asarray(s_grid, dtype=float)
    lam = inp.lam
    family = np.zeros((inp.j0, s_grid.size))
    previous = np.zeros(s_grid.size)
    for j, eps_j in enumerate(inp.eps):
        branches = ((inp.c1 * eps_j ** inp.gamma1, inp.gamma1), (inp.c2 * eps_j ** inp.gamma2, inp.gamma2))
        layer = family[j]
        layer[0] = inp.c3 * eps_j ** (-(1 - inp.delta))
        slope_old = _slope(layer[0], previous[0], lam, branches)
        for i in range(1, s_grid.size):
            ds = s_grid[i] - s_grid[i - 1]
            m_old = layer[i - 1]
            floor = max(lam * previous[i], 0.0)

            def residual(m):
                return m - m_old + 0.5 * ds * (slope_old + _slope(m, previous[i], lam, branches))

            if m_old <= floor:
                value = m_old
            elif residual(floor) >= 0:
                value = floor
            else:
                try:
                    value = brentq(residual, floor, m_old, xtol=1e-14 * max(m_old, 1e-300), rtol=1e-14)
                except (ValueError, RuntimeError) as err:
                    raise StiffStep(f"layer {j + 1}: step at s={s_grid[i]:.3e} not bracketed; "
                                    f"refine the s grid ({err})") from err
            if not math.isfinite(value):
                raise StiffStep(f"layer {j + 1}: non-finite value at s={s_grid[i]:.3e}; refine the s grid")
            layer[i] = value
            slope_old = _slope(value, previous[i], lam, branches)
        previous = layer
    return family


def separable_solution(k, gamma, lam, K, s):
    """M = (1-lam) k (-M')^(1+gamma), M(0) = K, clipped at zero."""
    a = 1.0 / (1 + gamma)
    rate = ((1 - lam) * k) ** (-a)
    base = K ** (1 - a) - (1 - a) * rate * np.asarray(s, dtype=float)
    return np.where(base > 0, np.maximum(base, 0.0) ** (1.0 / (1 - a)), 0.0)


def lemma926_bound_check(family, inp: Lemma926Input, s_grid, tol_slope=0.05) -> dict:
    """
    Fits B1, B2 of max{B1 s^-e, B2} minimally over the family envelope and the
    log-log slope of its decaying part.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    exponent = inp.envelope_exponent()
    envelope = np.max(family, axis=0) if family.size else np.zeros(s_grid.size)
    positive = s_grid > 0
    b2 = float(envelope[-1])
    above = positive & (envelope > b2)
    b1 = float(np.max(envelope[above] * s_grid[above] ** exponent)) if np.any(above) else 0.0
    peak = float(np.max(envelope)) if envelope.size else 0.0
    window = positive & (envelope > 2 * b2) & (envelope < 0.5 * peak)
    fit = loglog_fit(s_grid[window], envelope[window])
    slope = abs(fit["slope"]) if fit else None
    limit = exponent * (1 + tol_slope)
    return {
        "B1": b1,
        "B2": b2,
        "theoretical_exponent": exponent,
        "fitted_slope": slope,
        "fit": fit,
        "limit": limit,
        "slope_ok": slope is None or slope <= limit,
    }


def random_eps_sequence(rng, j0, first=0.5, low=0.4, high=0.6):
    ratios = rng.uniform(low, high, size=max(j0 - 1, 0))
    return (first * np.concatenate(([1.0], np.cumprod(ratios)))).tolist()


def geometric_eps_sequence(j0, first=0.5, ratio=0.5):
    return (first * ratio ** np.arange(j0)).tolist()


def lemma926_sweep(sweep, s_grid, rng, eps_first=0.5, low=0.4, high=0.6, tol_slope=0.05, drift_tol=0.1,
                  progress=True):
    """
    Headline family on eps_j = 2^-j plus the stability study of (B1, B2)
    across random eps sequences and several j0.
    """
    base = dict(c1=sweep.c1, c2=sweep.c2, c3=sweep.c3, delta=sweep.delta,
                gamma1=sweep.gamma1, gamma2=sweep.gamma2, lam=sweep.lam)
    headline_input = Lemma926Input(eps=geometric_eps_sequence(sweep.j0, eps_first, 0.5), **base)
    headline = lemma926_propagate(headline_input, s_grid)
    headline_check = lemma926_bound_check(headline, headline_input, s_grid, tol_slope)

    runs = []
    for n in tqdm(range(sweep.n_sequences), desc=f"{sweep.name} sweep", disable=not progress):
        sequence = random_eps_sequence(rng, max(sweep.j0_values), eps_first, low, high)
        for j0 in sweep.j0_values:
            inp = Lemma926Input(eps=sequence[:j0], **base)
            check = lemma926_bound_check(lemma926_propagate(inp, s_grid), inp, s_grid, tol_slope)
            runs.append({"sequence": n, "j0": j0, "B1": check["B1"], "B2": check["B2"],
                         "fitted_slope": check["fitted_slope"], "slope_ok": check["slope_ok"]})
            logger.debug(f"{sweep.name}: sequence {n}, j0={j0}: B1={check['B1']:.6g}, B2={check['B2']:.6g}")

    def drift(key):
        values = [run[key] for run in runs]
        top = max(values, default=0.0)
        return (top - min(values)) / top if top > 0 else 0.0

    drifts = {"B1": drift("B1"), "B2": drift("B2")}
    stable = all(value < drift_tol for value in drifts.values())
    passed = headline_check["slope_ok"] and all(run["slope_ok"] for run in runs) and stable
    logger.info(f"{sweep.name}: slope={headline_check['fitted_slope']}, limit={headline_check['limit']:.4g}, "
                f"drift B1={drifts['B1']:.3%}, B2={drifts['B2']:.3%}")
    return {
        "name": sweep.name,
        "headline": headline_check,
        "headline_family": headline,
        "runs": runs,
        "drift": drifts,
        "drift_tol": drift_tol,
        "stable": stable,
        "passed": passed,
    }
