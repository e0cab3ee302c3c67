# -*- coding:UTF-8 -*-
from typing import Dict, List, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel

from src.exponents import ExponentSet
from utils.config import VerifyConfig
from utils.helpers import LabError, loglog_fit

PASS = "PASS"
FAIL = "FAIL"
SKIPPED = "SKIPPED"
NON_PROBATIVE = "NON_PROBATIVE"
EXPLORATION = "EXPLORATION"


class InsufficientDecay(LabError):
    pass


class CheckEntry(BaseModel):
    name: str
    status: str
    measured: Optional[float] = None
    bound: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""
    data: dict = {}

    @property
    def failed(self):
        return self.status == FAIL


class VerificationReport(BaseModel):
    scenario_id: str
    checks: Dict[str, CheckEntry] = {}
    exponents: dict = {}
    tolerances: dict = {}
    provenance: dict = {}
    notes: List[str] = []

    def add(self, entry: CheckEntry):
        self.checks[entry.name] = entry
        logger.info(f"[{self.scenario_id}] {entry.name}: {entry.status} {entry.detail}")
        return entry

    def failures(self):
        return [name for name, entry in self.checks.items() if entry.failed]

    @property
    def passed(self):
        return not self.failures()


def middle_decade(s_grid):
    s_grid = np.asarray(s_grid, dtype=float)
    center = np.sqrt(s_grid.min() * s_grid.max())
    lo, hi = center / np.sqrt(10.0), center * np.sqrt(10.0)
    return (s_grid >= lo * (1 - 1e-12)) & (s_grid <= hi * (1 + 1e-12))


def theorem1_check(profile, exps: ExponentSet, t_final=None, config: VerifyConfig = None,
                   beta=None) -> CheckEntry:
    """
    Log-log slope of E(t_final, s) + sup h(., s) over the middle decade of the
    s grid against the bound s^-nu.
    """
    config = config or VerifyConfig()
    t_final = profile.t_final if t_final is None else t_final
    window = middle_decade(profile.s)
    s = profile.s[window]
    values = np.array([profile.total_at(t_final, profile.index_of(value)) for value in s])
    positive = values[values > 0]
    if positive.size < 3 or np.log(positive.max() / positive.min()) < config.flat_tol:
        raise InsufficientDecay(f"energy is flat in s over [{s.min():.3g}, {s.max():.3g}]; "
                                f"regime too weak for a slope test")
    fit = loglog_fit(s, values)
    slope = abs(fit["slope"])
    limit = exps.nu * (1 + config.tol_slope)
    data = {"fit": fit, "s": s.tolist(), "energy": values.tolist(), "nu": exps.nu, "t_final": t_final}
    if beta is not None and beta >= exps.beta0:
        return CheckEntry(name="theorem1", status=EXPLORATION, measured=slope, bound=exps.nu,
                          tolerance=config.tol_slope, data=data,
                          detail=f"beta={beta:g} >= beta0={exps.beta0:g}: slope {slope:.4g} vs nu {exps.nu:.4g}")
    status = PASS if slope <= limit else FAIL
    return CheckEntry(name="theorem1", status=status, measured=slope, bound=limit, tolerance=config.tol_slope,
                      data=data, detail=f"|slope|={slope:.4g} <= nu(1+tol)={limit:.4g}")


def corollary_profile_check(traj, exps: ExponentSet, config: VerifyConfig = None) -> CheckEntry:
    config = config or VerifyConfig()
    limit = exps.mu * (1 + config.tol_slope)
    if not exps.corollary_applicable:
        return CheckEntry(name="corollary1", status=SKIPPED, bound=limit, tolerance=config.tol_slope,
                          detail="condition 0 < p-1 < q < 1 fails")
    x = traj.x
    hx = traj.mesh.hx
    d = np.minimum(x, 1.0 - x)
    lo, hi = config.profile_window
    window = (d >= lo * hx) & (d <= hi * hx)
    values = np.abs(traj.u[-1][window])
    data = {"d": d[window].tolist(), "abs_u": values.tolist(), "mu": exps.mu, "non_probative": False}
    if not np.any(values > 0):
        data["non_probative"] = True
        return CheckEntry(name="corollary1", status=PASS, measured=0.0, bound=limit, tolerance=config.tol_slope,
                          data=data, detail="profile identically zero: vacuous pass, non-probative")
    fit = loglog_fit(d[window], values)
    if fit is None:
        return CheckEntry(name="corollary1", status=NON_PROBATIVE, bound=limit, tolerance=config.tol_slope,
                          data=data, detail="fewer than three positive profile values in the window")
    slope = abs(fit["slope"])
    data["fit"] = fit
    status = PASS if slope <= limit else FAIL
    return CheckEntry(name="corollary1", status=status, measured=slope, bound=limit, tolerance=config.tol_slope,
                      data=data, detail=f"|slope|={slope:.4g} <= mu(1+tol)={limit:.4g}")


def _growth(series, ref):
    if series[ref] > 0:
        return float(series[-1] / series[ref])
    return 1.0 if series[-1] == 0 else float("inf")


def localization_check(traj, s_interior=0.25, growth_cap=1.5, T=None, in_theorem_range=True,
                       min_boundary_growth=10.0) -> CheckEntry:
    """
    m(t) = max |u| over (s_interior, 1 - s_interior), compared between the last level
    and the level where T - t is ten times larger. The boundary trace must have
    grown by min_boundary_growth over the run, otherwise the check cannot tell
    localization from bounded data and is non-probative.
    """
    if not 0 < s_interior < 0.5:
        raise ValueError(f"s_interior must lie in (0, 1/2), got {s_interior}")
    T = traj.mesh.t_stop if T is None else T
    interior = (traj.x > s_interior) & (traj.x < 1.0 - s_interior)
    m = np.max(np.abs(traj.u[:, interior]), axis=1)
    boundary = np.maximum(np.abs(traj.u[:, 0]), np.abs(traj.u[:, -1]))
    remaining = T - traj.t
    earlier = np.flatnonzero(remaining >= 10.0 * remaining[-1])
    tag = "in-theorem-range" if in_theorem_range else "out-of-theorem-range"
    if earlier.size == 0:
        return CheckEntry(name="localization", status=NON_PROBATIVE, tolerance=growth_cap,
                          detail=f"trajectory does not span a time decade before t_final ({tag})")
    ref = int(earlier[-1])

    interior_growth = _growth(m, ref)
    boundary_growth = _growth(boundary, 0)
    decade_growth = _growth(boundary, ref)
    data = {"t_ref": float(traj.t[ref]), "t_final": float(traj.t[-1]), "interior_max": m[[ref, -1]].tolist(),
            "boundary_growth": boundary_growth, "boundary_growth_last_decade": decade_growth,
            "boundary_grew_10x": bool(boundary_growth >= min_boundary_growth),
            "in_theorem_range": in_theorem_range, "s_interior": s_interior}
    detail = (f"interior growth {interior_growth:.4g} (cap {growth_cap:g}), boundary growth "
              f"{boundary_growth:.4g} over the run, {decade_growth:.4g} over the last decade ({tag})")
    if boundary_growth < min_boundary_growth:
        status = NON_PROBATIVE
        detail += f"; boundary grew less than {min_boundary_growth:g}x"
    else:
        status = PASS if interior_growth <= growth_cap else FAIL
    return CheckEntry(name="localization", status=status, measured=interior_growth, bound=growth_cap,
                      tolerance=growth_cap, detail=detail, data=data)


def amplitude_scaling_check(profile_a, profile_b, omega_a, omega_b, exps: ExponentSet, s_values,
                            beta, p, q, tol=0.25) -> CheckEntry:
    """
    Interior energy ratio between two runs of amplitudes omega_a < omega_b must
    stay under (omega_b/omega_a)^((q+1)/(beta(p-q))).
    """
    power = (q + 1) / (beta * (p - q))
    bound = (omega_b / omega_a) ** power * (1 + tol)
    ratios = []
    for s in s_values:
        a = profile_a.total_at(profile_a.t_final, profile_a.index_of(s))
        b = profile_b.total_at(profile_b.t_final, profile_b.index_of(s))
        if a > 0:
            ratios.append(b / a)
    if not ratios:
        return CheckEntry(name="amplitude_scaling", status=NON_PROBATIVE, bound=bound, tolerance=tol,
                          detail="reference run has zero interior energy")
    measured = max(ratios)
    status = PASS if measured <= bound else FAIL
    return CheckEntry(name="amplitude_scaling", status=status, measured=measured, bound=bound, tolerance=tol,
                      data={"ratios": ratios, "omega_a": omega_a, "omega_b": omega_b, "power": power},
                      detail=f"max energy ratio {measured:.4g} <= {bound:.4g}")


def refinement_check(report_a: VerificationReport, report_b: VerificationReport, drift_tol=0.1) -> CheckEntry:
    changed = [name for name, entry in report_a.checks.items()
               if name in report_b.checks and report_b.checks[name].status != entry.status]
    drift = None
    weighted_a = report_a.checks.get("weighted_diagnostic")
    weighted_b = report_b.checks.get("weighted_diagnostic")
    if weighted_a is not None and weighted_b is not None and weighted_a.measured:
        drift = abs(weighted_b.measured - weighted_a.measured) / abs(weighted_a.measured)
    stable = not changed and (drift is None or drift < drift_tol)
    detail = f"status changes: {changed or 'none'}"
    if drift is not None:
        detail += f", weighted-constant drift {drift:.3%}"
    return CheckEntry(name="refinement", status=PASS if stable else FAIL, measured=drift, bound=drift_tol,
                      tolerance=drift_tol, data={"changed": changed}, detail=detail)


def energy_refinement_check(profile_a, profile_b, tol=0.05) -> CheckEntry:
    """
    Relative change of E + sup h at the last level between a run and its
    (h_x, dt)-refined companion, over the depths both share in the middle decade
    of the coarse grid.
    """
    window = profile_a.s[middle_decade(profile_a.s)]
    shared, drifts = [], []
    for s in window:
        try:
            m_b = profile_b.index_of(s)
        except KeyError:
            continue
        a = profile_a.total_at(profile_a.t_final, profile_a.index_of(s))
        b = profile_b.total_at(profile_b.t_final, m_b)
        if a > 0:
            shared.append(float(s))
            drifts.append(abs(b - a) / a)
    if not drifts:
        return CheckEntry(name="refinement_energy", status=NON_PROBATIVE, bound=tol, tolerance=tol,
                          detail="no shared depth with positive energy")
    measured = max(drifts)
    return CheckEntry(name="refinement_energy", status=PASS if measured < tol else FAIL, measured=measured,
                      bound=tol, tolerance=tol, data={"s": shared, "drift": drifts},
                      detail=f"max energy drift {measured:.3%} over {len(shared)} depths")
