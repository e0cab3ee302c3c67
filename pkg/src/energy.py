# -*- coding:UTF-8 -*-
from typing import List, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import bisect
from tqdm import tqdm

from src.exponents import ParameterError, ProblemParams, compute_exponents
from utils.config import EnergyConfig
from utils.helpers import LabError, geometric_grid


class UnresolvedRoot(LabError):
    pass


def default_s_grid(hx, config: EnergyConfig = None):
    config = config or EnergyConfig()
    grid = geometric_grid(config.s_min_factor * hx, config.s_max, config.per_decade)
    return np.union1d(grid, [config.s_tilde])


def _check_depths(s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s <= 0) or np.any(s >= 0.5):
        raise ValueError(f"interior depth s must lie in (0, 1/2), got {s}")
    return s


def _integral_upto(cum, dens, hx, y):
    """int_0^y of the piecewise-linear density, for every row of dens."""
    n_cells = dens.shape[1] - 1
    i = min(int(np.floor(y / hx)), n_cells - 1)
    frac = y - i * hx
    f_y = dens[:, i] + (dens[:, i + 1] - dens[:, i]) * frac / hx
    return cum[:, i] + 0.5 * frac * (dens[:, i] + f_y)


def _interior_integrals(dens, hx, s_values):
    # columns: int over (s, 1-s); s = 0 gives the whole interval
    cum = np.concatenate([np.zeros((dens.shape[0], 1)), cumulative_trapezoid(dens, dx=hx, axis=1)], axis=1)
    out = np.empty((dens.shape[0], len(s_values)))
    for m, s in enumerate(s_values):
        if s == 0:
            out[:, m] = cum[:, -1]
        else:
            out[:, m] = _integral_upto(cum, dens, hx, 1.0 - s) - _integral_upto(cum, dens, hx, s)
    return out


class EnergyProfile:
    """
    Tabulated interior energies on stored time levels:
    E[k, m]  = int_0^{t_k} int_{Omega(s_m)} |u_x|^(p+1)
    h[k, m]  = int_{Omega(s_m)} |u(t_k)|^(q+1)
    hsup     = running max of h over levels
    plus the same three columns for the whole domain (s = 0). Queries past the
    last level hold the last values up to T.
    """

    def __init__(self, t, s, E, h, T, E_global=None, h_global=None):
        self.t = np.asarray(t, dtype=float)
        self.s = np.asarray(s, dtype=float)
        self.E = np.asarray(E, dtype=float).reshape(self.t.size, self.s.size)
        self.h = np.asarray(h, dtype=float).reshape(self.t.size, self.s.size)
        self.hsup = np.maximum.accumulate(self.h, axis=0)
        self.T = float(T)
        self.E_global = np.zeros_like(self.t) if E_global is None else np.asarray(E_global, dtype=float)
        self.h_global = np.zeros_like(self.t) if h_global is None else np.asarray(h_global, dtype=float)
        self.hsup_global = np.maximum.accumulate(self.h_global)

    @property
    def t_final(self):
        return float(self.t[-1])

    def index_of(self, s):
        matches = np.flatnonzero(np.isclose(self.s, s, rtol=1e-9, atol=0.0))
        if matches.size == 0:
            raise KeyError(f"depth s={s} is not on the tabulated grid")
        return int(matches[0])

    def _columns(self, m):
        if m is None:
            return self.E_global, self.h_global, self.hsup_global
        return self.E[:, m], self.h[:, m], self.hsup[:, m]

    def E_at(self, t, m=None):
        return float(np.interp(t, self.t, self._columns(m)[0]))

    def h_at(self, t, m=None):
        return float(np.interp(t, self.t, self._columns(m)[1]))

    def hsup_at(self, t, m=None):
        _, h, hsup = self._columns(m)
        k = int(np.searchsorted(self.t, t, side="right")) - 1
        if k < 0:
            return float(h[0])
        return max(float(hsup[k]), self.h_at(t, m))

    def window_sup(self, t_a, t_b, m=None):
        # sup of the interpolated h over (t_a, t_b)
        h = self._columns(m)[1]
        lo = int(np.searchsorted(self.t, t_a, side="right"))
        hi = int(np.searchsorted(self.t, t_b, side="left"))
        inner = float(np.max(h[lo:hi])) if hi > lo else 0.0
        return max(inner, self.h_at(t_a, m), self.h_at(t_b, m))

    def total_at(self, t, m=None):
        return self.E_at(t, m) + self.hsup_at(t, m)

    def monotone_in_s(self, rtol=1e-10):
        scale = max(float(np.max(np.abs(self.E))), float(np.max(np.abs(self.hsup))), 1e-300)
        dE = np.diff(self.E, axis=1)
        dH = np.diff(self.hsup, axis=1)
        return bool(np.all(dE <= rtol * scale) and np.all(dH <= rtol * scale))

    def long_table(self):
        tt, ss = np.meshgrid(self.t, self.s, indexing="ij")
        return {"s": ss.ravel(order="F"), "t": tt.ravel(order="F"),
                "E": self.E.ravel(order="F"), "hsup": self.hsup.ravel(order="F")}

    def save(self, path):
        with open(path, "wb") as fw:
            np.savez(fw, t=self.t, s=self.s, E=self.E, h=self.h, T=self.T,
                     E_global=self.E_global, h_global=self.h_global)
        return path

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(data["t"], data["s"], data["E"], data["h"], float(data["T"]),
                       data["E_global"], data["h_global"])


def tabulate_profile(traj, T, s_grid, config: EnergyConfig = None, progress=True) -> EnergyProfile:
    config = config or EnergyConfig()
    s_grid = _check_depths(s_grid)
    hx = traj.mesh.hx
    depths = np.concatenate(([0.0], s_grid))
    n_levels = traj.n_levels
    grad_int = np.empty((n_levels, depths.size))
    mass_int = np.empty((n_levels, depths.size))
    for start in tqdm(range(0, n_levels, config.chunk), desc="energy tabulation", disable=not progress):
        block = traj.u[start:start + config.chunk]
        ux = np.gradient(block, hx, axis=1)
        grad_int[start:start + config.chunk] = _interior_integrals(np.abs(ux) ** (traj.p + 1), hx, depths)
        mass_int[start:start + config.chunk] = _interior_integrals(np.abs(block) ** (traj.q + 1), hx, depths)
    E = np.concatenate([np.zeros((1, depths.size)),
                        cumulative_trapezoid(grad_int, traj.t, axis=0)], axis=0) if n_levels > 1 \
        else np.zeros((1, depths.size))
    profile = EnergyProfile(traj.t, s_grid, E[:, 1:], mass_int[:, 1:], T, E[:, 0], mass_int[:, 0])
    if not profile.monotone_in_s():
        logger.warning("tabulated energies are not nonincreasing in s; refine the grid")
    logger.info(f"energy profile: {n_levels} levels x {s_grid.size} depths, "
                f"E_global(t_final)={profile.E_global[-1]:.6g}")
    return profile


def energy_E(traj, t, s):
    """int_0^t int_{s<x<1-s} |u_x|^(p+1), time-interpolated between levels."""
    s = float(_check_depths(s)[0])
    profile = tabulate_profile(traj, float("inf"), [s], progress=False)
    return profile.E_at(t, 0)


def energy_h_sup(traj, t, s):
    """sup over stored levels up to t of int_{s<x<1-s} |u|^(q+1)."""
    s = float(_check_depths(s)[0])
    profile = tabulate_profile(traj, float("inf"), [s], progress=False)
    return profile.hsup_at(t, 0)


def calibrate_omega0(profile: EnergyProfile, params: ProblemParams) -> float:
    """
    Smallest omega0 with E(t) + sup h <= omega0 (T - t)^(-alpha) on the whole
    domain, taken conservatively per interval [t_k, t_(k+1)].
    """
    alpha = compute_exponents(params).alpha
    total = profile.E_global + profile.hsup_global
    weights = (profile.T - profile.t) ** alpha
    upper = np.append(total[1:], total[-1])
    return float(np.max(upper * weights))


def _normalizer(params, alpha, alpha1):
    return params.xi ** alpha / (params.omega0 * params.T ** (alpha - alpha1))


class LayerSequence(BaseModel):
    s_tilde: float
    t: List[float] = []
    delta: List[float] = []
    alternative: bool = False
    t_prime: Optional[float] = None
    identity_residual: List[float] = []
    r_monotone: bool = True
    threshold: float = 0.0
    total_at_T: float = 0.0

    @property
    def j0(self):
        return len(self.delta)

    def table(self):
        return {
            "j": list(range(1, self.j0 + 1)),
            "t_j": self.t[1:],
            "delta_j": self.delta,
            "identity_residual": self.identity_residual,
        }


def _gamma_residual(profile, m, c, alpha, t, gamma):
    layer = profile.E_at(gamma, m) - profile.E_at(t, m) + profile.window_sup(t, gamma, m)
    return (gamma - t) ** (-alpha) - c * layer


def t_prime(profile: EnergyProfile, s_tilde, params: ProblemParams, config: EnergyConfig = None) -> float:
    """
    t' with (T - t')^(-alpha) = c (E(T) - E(t') + sup_{(t', T)} h); the residual
    increases in t'.
    """
    config = config or EnergyConfig()
    exps = compute_exponents(params)
    alpha, alpha1 = exps.alpha, params.resolved_alpha1()
    c = _normalizer(params, alpha, alpha1)
    m = profile.index_of(s_tilde)
    T = profile.T
    upper = T * (1.0 - 1e-12)

    def residual(tp):
        return _gamma_residual(profile, m, c, alpha, tp, T)

    if residual(0.0) >= 0:
        return 0.0
    if residual(upper) <= 0:
        raise UnresolvedRoot(f"t' not bracketed below T at s={s_tilde:g}; tabulate closer to T")
    return float(bisect(residual, 0.0, upper, xtol=config.root_xtol * T, maxiter=200))


def _r_monotone(profile, m, alpha):
    r = (profile.E[:, m] + profile.hsup[:, m]) * profile.t ** alpha
    return bool(np.all(np.diff(r[1:]) > 0)) if r.size > 2 else True


def gamma_sequence(profile: EnergyProfile, s_tilde, params: ProblemParams, config: EnergyConfig = None) -> LayerSequence:
    """
    Layer times t_j = Gamma(t_(j-1)), t_0 = 0, where Gamma(t) solves
    (Gamma - t)^(-alpha) = c (E(Gamma) - E(t) + sup_{(t, Gamma)} h),
    c = xi^alpha / (omega0 T^(alpha - alpha1)); iteration stops at the first
    t_j past t'. Below the threshold 2 omega0 T^(-alpha1) xi^(-alpha) the
    alternative case applies and no layers are built.
    """
    config = config or EnergyConfig()
    if params.omega0 is None:
        raise ParameterError("gamma_sequence needs omega0; calibrate it first")
    exps = compute_exponents(params)
    alpha, alpha1 = exps.alpha, params.resolved_alpha1()
    m = profile.index_of(s_tilde)
    T = profile.T
    total_T = profile.total_at(T, m)
    threshold = 2.0 * params.omega0 * T ** (-alpha1) * params.xi ** (-alpha)
    r_monotone = _r_monotone(profile, m, alpha)
    if not r_monotone:
        logger.warning(f"R(t) = (E + sup h) t^alpha is not strictly increasing at s={s_tilde:g}; "
                       f"roots taken as the first bracketed ones")
    if total_T <= threshold:
        logger.info(f"s={s_tilde:g}: E(T)+sup h={total_T:.6g} <= {threshold:.6g}, alternative case")
        return LayerSequence(s_tilde=s_tilde, alternative=True, r_monotone=r_monotone,
                             threshold=threshold, total_at_T=total_T)

    c = _normalizer(params, alpha, alpha1)
    tp = t_prime(profile, s_tilde, params, config)
    times, deltas, residuals = [0.0], [], []
    while _gamma_residual(profile, m, c, alpha, times[-1], T) <= 0:
        if len(deltas) >= config.max_layers:
            raise UnresolvedRoot(f"more than {config.max_layers} layers at s={s_tilde:g}")
        t_prev = times[-1]
        lower = t_prev + 1e-14 * T

        def residual(gamma):
            return _gamma_residual(profile, m, c, alpha, t_prev, gamma)

        if residual(lower) <= 0:
            raise UnresolvedRoot(f"Gamma({t_prev:.12g}) not bracketed at s={s_tilde:g}; refine the t grid")
        root = bisect(residual, lower, T, xtol=config.root_xtol * T, maxiter=200)
        delta = root - t_prev
        rhs = c * (profile.E_at(root, m) - profile.E_at(t_prev, m) + profile.window_sup(t_prev, root, m))
        residuals.append(abs(delta ** (-alpha) - rhs) / delta ** (-alpha))
        times.append(float(root))
        deltas.append(float(delta))
        logger.debug(f"layer {len(deltas)}: t={root:.12g}, delta={delta:.6e}")
    logger.info(f"s={s_tilde:g}: {len(deltas)} layers, t'={tp:.9g}, "
                f"max identity residual {max(residuals, default=0.0):.2e}")
    return LayerSequence(s_tilde=s_tilde, t=times, delta=deltas, t_prime=tp,
                         identity_residual=residuals, r_monotone=r_monotone,
                         threshold=threshold, total_at_T=total_T)


def global_energy_precondition(profile: EnergyProfile, params: ProblemParams, tol=1e-9) -> dict:
    # E(t) + sup h <= omega0 (T - t)^(-alpha) on the whole domain, at stored levels
    alpha = compute_exponents(params).alpha
    total = profile.E_global + profile.hsup_global
    bound = params.omega0 * (profile.T - profile.t) ** (-alpha)
    ratio = float(np.max(total / bound)) if bound.size else 0.0
    return {"holds": ratio <= 1.0 + tol, "max_ratio": ratio}


def check_qualified_monotonicity(seq: LayerSequence, xi, tol_ratio=0.05, precondition=None) -> dict:
    """
    Delta_(j+1) <= xi Delta_j for every generated layer, the closing ratio
    Delta_j0 / Delta_(j0-1) included; fewer than two layers pass vacuously.
    """
    ratios = [b / a for a, b in zip(seq.delta[:-1], seq.delta[1:])]
    limit = xi * (1.0 + tol_ratio)
    flags = [r <= limit for r in ratios]
    report = {
        "ratios": ratios,
        "per_layer": flags,
        "max_ratio": max(ratios) if ratios else None,
        "tail_ratio": ratios[-1] if ratios else None,
        "limit": limit,
        "passed": all(flags),
        "vacuous": not ratios,
        "precondition": precondition,
        "non_probative": bool(precondition is not None and not precondition["holds"]),
    }
    return report


def layered_energies(profile: EnergyProfile, seq: LayerSequence):
    """E_j(s) = E(t_j, s) - E(t_(j-1), s) and h_j(s) = sup over (t_(j-1), t_j) of h(., s)."""
    n_s = profile.s.size
    E_j = np.zeros((seq.j0, n_s))
    h_j = np.zeros((seq.j0, n_s))
    for j in range(seq.j0):
        t_a, t_b = seq.t[j], seq.t[j + 1]
        for m in range(n_s):
            E_j[j, m] = profile.E_at(t_b, m) - profile.E_at(t_a, m)
            h_j[j, m] = profile.window_sup(t_a, t_b, m)
    return E_j, h_j


def weighted_energy_diagnostic(profile: EnergyProfile, seq: LayerSequence, params: ProblemParams) -> dict:
    """
    A_j = Delta_j^alpha1 E_j, H_j = Delta_j^alpha1 h_j at s_tilde and the weighted
    sums U_j^(k) = sum_i (1+gamma)^((j-i)/(1+mu_k)) (Delta_j/Delta_i)^(alpha1 - nu_k/(1+mu_k)) (A_i + H_i);
    reports sup_j U_j Delta_j^(alpha-alpha1) / omega0 with U_j = U_j^(1) + U_j^(2).
    """
    if seq.j0 == 0:
        return {"constant": 0.0, "sup_ratio": None, "finite": True, "per_layer": []}
    exps = compute_exponents(params)
    alpha, alpha1, gamma = exps.alpha, params.resolved_alpha1(), params.gamma
    m = profile.index_of(seq.s_tilde)
    E_j, h_j = layered_energies(profile, seq)
    delta = np.asarray(seq.delta)
    weight = delta ** alpha1
    load = weight * (E_j[:, m] + h_j[:, m])

    idx = np.arange(seq.j0)
    lag = idx[:, None] - idx[None, :]
    lower = lag >= 0
    scaled = {}
    for tag, nu_k, mu_k in (("U1", exps.nu1, exps.mu1), ("U2", exps.nu2, exps.mu2)):
        power = alpha1 - nu_k / (1 + mu_k)
        with np.errstate(over="ignore"):
            kernel = np.where(lower, (1 + gamma) ** (lag / (1 + mu_k)) * (delta[:, None] / delta[None, :]) ** power, 0.0)
        U = kernel @ load
        scaled[tag] = U * delta ** (alpha - alpha1) / params.omega0
    combined = scaled["U1"] + scaled["U2"]
    running = np.maximum.accumulate(combined)
    constant = float(running[-1])
    sup_ratio = float(running[-1] / running[-2]) if seq.j0 > 1 and running[-2] > 0 else None
    return {
        "constant": constant,
        "constant_U1": float(np.max(scaled["U1"])),
        "constant_U2": float(np.max(scaled["U2"])),
        "sup_ratio": sup_ratio,
        "finite": bool(np.isfinite(constant)),
        "per_layer": combined.tolist(),
        "per_layer_U1": scaled["U1"].tolist(),
        "per_layer_U2": scaled["U2"].tolist(),
    }
