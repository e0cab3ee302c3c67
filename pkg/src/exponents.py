# -*- coding:UTF-8 -*-
from typing import List, Optional

from loguru import logger
from pydantic import BaseModel, validator

from utils.helpers import LabError


class ParameterError(LabError):
    pass


class ProblemParams(BaseModel):
    p: float
    q: float
    n: int = 1
    T: float = 1.0
    omega0: Optional[float] = None
    beta: float
    xi: float = 0.3
    gamma: float = 0.1
    alpha1: Optional[float] = None

    class Config:
        allow_mutation = False
        extra = "forbid"

    @validator("n")
    def _positive_dimension(cls, value):
        if value < 1:
            raise ValueError("spatial dimension n must be a positive integer")
        return value

    @validator("T")
    def _finite_horizon(cls, value):
        if not value > 0:
            raise ValueError("blow-up time T must be positive")
        return value

    def critical_exponent(self):
        # (q+1)/(p-q): growth rate separating S- and LS-regimes
        return (self.q + 1) / (self.p - self.q)

    def resolved_alpha1(self):
        if self.alpha1 is not None:
            return self.alpha1
        alpha = self.critical_exponent() - self.beta
        return 0.5 * (1.0 / self.p + alpha)

    def with_omega0(self, omega0):
        return self.copy(update={"omega0": float(omega0)})


class ExponentSet(BaseModel):
    alpha: float
    beta0: float
    nu: float
    mu: float
    theta: float
    nu1: float
    mu1: float
    nu2: float
    mu2: float
    corollary_applicable: bool
    omega_power_theorem: float
    omega_power_corollary: float
    warnings: List[str] = []

    def table(self):
        rows = self.dict()
        rows["warnings"] = "; ".join(self.warnings)
        return rows


class ConditionResult(BaseModel):
    name: str
    condition: str
    passed: bool
    detail: str = ""


class ValidationReport(BaseModel):
    conditions: List[ConditionResult]
    xi_bound: Optional[float] = None
    xi_binding: Optional[str] = None

    @property
    def passed(self):
        return all(item.passed for item in self.conditions)

    def failures(self):
        return [item for item in self.conditions if not item.passed]

    def get(self, name):
        for item in self.conditions:
            if item.name == name:
                return item
        raise KeyError(name)


def compute_exponents(params: ProblemParams) -> ExponentSet:
    p, q, n, beta = params.p, params.q, params.n, params.beta
    if q <= 0:
        raise ParameterError(f"q must be positive, got q={q}")
    if p <= q:
        raise ParameterError(f"condition p > q violated: p={p}, q={q}")
    if beta <= 0:
        raise ParameterError(f"regime exponent beta must be positive, got beta={beta}")

    gap = p - q
    critical = (q + 1) / gap
    alpha = critical - beta
    beta0 = critical - 1.0 / p
    theta = (n * gap + q + 1) / (n * gap + (q + 1) * (p + 1))
    denom = q * (p + 1) + theta * gap
    nu1 = (1 - theta) * (q + 1) / denom
    mu1 = (1 - theta) * gap / denom
    nu2 = (q + 1) / (q * (p + 1))
    mu2 = gap / (q * (p + 1))
    nu = (n * gap + (q + 1) * (p + 1)) * (q + 1 - beta * gap) / (beta * gap ** 2)
    mu = (n * gap + (p + 1) * (q + 1) - beta * gap * (p + 1)) / (beta * gap ** 2)

    warnings = []
    if beta >= beta0:
        warnings.append(f"beta={beta:g} outside admissible range (0, beta0={beta0:g})")
    if alpha <= 0:
        warnings.append(f"alpha={alpha:g} is not positive: regime grows at or above the critical rate")
    for note in warnings:
        logger.warning(note)

    return ExponentSet(
        alpha=alpha,
        beta0=beta0,
        nu=nu,
        mu=mu,
        theta=theta,
        nu1=nu1,
        mu1=mu1,
        nu2=nu2,
        mu2=mu2,
        corollary_applicable=bool(0 < p - 1 < q < 1),
        omega_power_theorem=(q + 1) / (beta * gap),
        omega_power_corollary=1.0 / (beta * gap),
        warnings=warnings,
    )


def proof_exponents(params: ProblemParams, exps: ExponentSet) -> dict:
    """
    Intermediate exponents of the layer-iteration argument. The Stampacchia pair
    (rho, lambda_s) recovers nu through rho / (1 - lambda_s).
    """
    alpha, beta, mu1 = exps.alpha, params.beta, exps.mu1
    alpha1 = params.resolved_alpha1()
    rho = (1 + mu1) * (alpha - alpha1) / (mu1 * beta)
    lambda_s = alpha1 / alpha
    return {
        "alpha1": alpha1,
        "gamma1": (alpha + beta - alpha1) / beta,
        "gamma2": (alpha + beta) * (alpha - alpha1) / (alpha * beta),
        "psi_exponent": rho,
        "stampacchia_rho": rho,
        "stampacchia_lambda": lambda_s,
        "nu_from_iteration": rho / (1 - lambda_s),
        "omega_power_final": (alpha + beta) / beta,
    }


def xi_bounds(params: ProblemParams, exps: ExponentSet) -> dict:
    # upper bounds on xi from (1+gamma) xi^alpha1 < 1 and theta_1, theta_2 < 1
    gamma, alpha1 = params.gamma, params.resolved_alpha1()
    bounds = {"lambda": (1 + gamma) ** (-1.0 / alpha1)}
    for tag, nu_k, mu_k in (("theta1", exps.nu1, exps.mu1), ("theta2", exps.nu2, exps.mu2)):
        power = alpha1 - nu_k / (1 + mu_k)
        bounds[tag] = (1 + gamma) ** (-1.0 / ((1 + mu_k) * power)) if power > 0 else 0.0
    return bounds


def theta_factors(params: ProblemParams, exps: ExponentSet):
    gamma, xi, alpha1 = params.gamma, params.xi, params.resolved_alpha1()
    theta1 = (1 + gamma) ** (1 / (1 + exps.mu1)) * xi ** (alpha1 - exps.nu1 / (1 + exps.mu1))
    theta2 = (1 + gamma) ** (1 / (1 + exps.mu2)) * xi ** (alpha1 - exps.nu2 / (1 + exps.mu2))
    return theta1, theta2


def validate_params(params: ProblemParams) -> ValidationReport:
    p, q, n, T, beta = params.p, params.q, params.n, params.T, params.beta
    xi, gamma = params.xi, params.gamma
    results = [
        ConditionResult(name="q>0", condition="q > 0", passed=q > 0, detail=f"q={q:g}"),
        ConditionResult(name="p>q", condition="p > q", passed=p > q, detail=f"p={p:g}, q={q:g}"),
        ConditionResult(name="p>1", condition="p > 1 (solver runs)", passed=p > 1, detail=f"p={p:g}"),
        ConditionResult(name="n>=1", condition="n >= 1", passed=n >= 1, detail=f"n={n}"),
        ConditionResult(name="T>=1", condition="1 <= T < inf", passed=T >= 1, detail=f"T={T:g}"),
        ConditionResult(name="xi in (0,1)", condition="0 < xi < 1", passed=0 < xi < 1, detail=f"xi={xi:g}"),
        ConditionResult(name="gamma>0", condition="gamma > 0", passed=gamma > 0, detail=f"gamma={gamma:g}"),
    ]
    if params.omega0 is not None:
        results.append(ConditionResult(name="omega0>0", condition="omega0 > 0",
                                       passed=params.omega0 > 0, detail=f"omega0={params.omega0:g}"))
    if not (p > q > 0):
        results.append(ConditionResult(name="beta<beta0", condition="0 < beta < beta0",
                                       passed=False, detail="beta0 undefined without p > q > 0"))
        return ValidationReport(conditions=results)

    beta0 = (q + 1) / (p - q) - 1.0 / p
    alpha = (q + 1) / (p - q) - beta
    alpha1 = params.resolved_alpha1()
    results.append(ConditionResult(name="beta<beta0", condition="0 < beta < beta0",
                                   passed=0 < beta < beta0, detail=f"beta={beta:g}, beta0={beta0:g}"))
    results.append(ConditionResult(name="alpha1 in (1/p,alpha)", condition="1/p < alpha1 < alpha",
                                   passed=1.0 / p < alpha1 < alpha,
                                   detail=f"1/p={1.0 / p:g}, alpha1={alpha1:g}, alpha={alpha:g}"))
    if beta <= 0 or not 0 < xi < 1:
        return ValidationReport(conditions=results)

    exps = compute_exponents(params)
    lam = (1 + gamma) * xi ** alpha1
    theta1, theta2 = theta_factors(params, exps)
    results.append(ConditionResult(name="lambda<1", condition="(1+gamma) xi^alpha1 < 1",
                                   passed=lam < 1, detail=f"lambda={lam:g}"))
    results.append(ConditionResult(name="theta1<1",
                                   condition="(1+gamma)^(1/(1+mu1)) xi^(alpha1-nu1/(1+mu1)) < 1",
                                   passed=theta1 < 1, detail=f"theta1={theta1:g}"))
    results.append(ConditionResult(name="theta2<1",
                                   condition="(1+gamma)^(1/(1+mu2)) xi^(alpha1-nu2/(1+mu2)) < 1",
                                   passed=theta2 < 1, detail=f"theta2={theta2:g}"))
    if exps.corollary_applicable:
        upper = (q + 1 - p) / q
        results.append(ConditionResult(name="holder_range", condition="0 < lambda_c <= (q+1-p)/q",
                                       passed=upper > 0, detail=f"lambda_c in (0, {upper:g}]"))

    bounds = xi_bounds(params, exps)
    binding = min(bounds, key=bounds.get)
    return ValidationReport(conditions=results, xi_bound=bounds[binding], xi_binding=binding)
