import numpy as np
import pytest

from src.energy import EnergyProfile
from src.exponents import ProblemParams, compute_exponents
from src.solver import Mesh, SolutionTrajectory
from src.verify import (EXPLORATION, FAIL, NON_PROBATIVE, PASS, SKIPPED, CheckEntry, InsufficientDecay,
                        VerificationReport, amplitude_scaling_check, corollary_profile_check, energy_refinement_check,
                        localization_check, middle_decade, refinement_check, theorem1_check)
from utils.helpers import geometric_grid

PARAMS = ProblemParams(p=1.5, q=0.8, beta=1.0)
EXPS = compute_exponents(PARAMS)
S_GRID = geometric_grid(1e-3, 0.4, 24)


def power_profile(power, scale=1.0):
    top = scale * S_GRID ** (-power)
    E = np.vstack([np.zeros_like(top), top])
    return EnergyProfile([0.0, 0.999], S_GRID, E, np.zeros_like(E), 1.0)


def profile_trajectory(exponent, p=1.5, q=0.8, nx=999):
    mesh = Mesh(nx, 2, 0.999)
    d = np.minimum(mesh.x, 1.0 - mesh.x)
    last = np.maximum(d, mesh.hx) ** (-exponent)
    u = np.vstack([np.zeros_like(last), 0.5 * last, last])
    return SolutionTrajectory(mesh, mesh.t, u, p, q, mesh.hx, [])


def test_middle_decade_spans_one_decade():
    window = middle_decade(S_GRID)
    s = S_GRID[window]
    assert 7.9 < s.max() / s.min() <= 10.0 * (1 + 1e-9)
    assert np.sqrt(s.min() * s.max()) == pytest.approx(np.sqrt(1e-3 * 0.4), rel=0.1)


def test_theorem1_passes_for_mild_blowup():
    entry = theorem1_check(power_profile(3.0), EXPS)
    assert entry.status == PASS
    assert entry.measured == pytest.approx(3.0, rel=1e-6)
    assert entry.bound == pytest.approx(EXPS.nu * 1.05)


def test_theorem1_fails_beyond_nu():
    entry = theorem1_check(power_profile(13.0), EXPS)
    assert entry.status == FAIL and entry.failed


def test_flat_energy_is_insufficient():
    with pytest.raises(InsufficientDecay):
        theorem1_check(power_profile(0.0), EXPS)


def test_supercritical_beta_is_exploration():
    entry = theorem1_check(power_profile(13.0), EXPS, beta=2.0)
    assert entry.status == EXPLORATION
    assert not entry.failed


def test_corollary_skipped_outside_range():
    exps = compute_exponents(ProblemParams(p=2.0, q=1.0, beta=1.0))
    entry = corollary_profile_check(profile_trajectory(2.0, p=2.0, q=1.0), exps)
    assert entry.status == SKIPPED


def test_corollary_zero_profile_is_vacuous_pass():
    traj = profile_trajectory(2.0)
    traj.u[-1] = 0.0
    entry = corollary_profile_check(traj, EXPS)
    assert entry.status == PASS and entry.measured == 0.0
    assert entry.data["non_probative"]


@pytest.mark.parametrize("exponent, status", [(2.0, PASS), (8.0, FAIL)])
def test_corollary_profile_slope(exponent, status):
    entry = corollary_profile_check(profile_trajectory(exponent), EXPS)
    assert entry.status == status
    assert not entry.data["non_probative"]
    assert entry.measured == pytest.approx(exponent, rel=1e-6)
    assert entry.bound == pytest.approx(EXPS.mu * 1.05)


def localized_trajectory(interior_grows):
    mesh = Mesh(49, 200, 0.999, grading=0.5)
    d = np.minimum(mesh.x, 1.0 - mesh.x)
    collar = np.clip(1.0 - 10.0 * d, 0.0, 1.0)
    rows = []
    for t in mesh.t:
        amplitude = 1.0 / (1.0 - t)
        rows.append(amplitude * (collar + 0.5) if interior_grows else amplitude * collar + 0.5)
    return SolutionTrajectory(mesh, mesh.t, np.array(rows), 1.5, 0.8, mesh.hx, [])


def test_localization_passes_when_interior_stays_bounded():
    entry = localization_check(localized_trajectory(False), T=1.0)
    assert entry.status == PASS
    assert entry.measured == pytest.approx(1.0)
    assert entry.data["boundary_growth"] > 600
    assert entry.data["boundary_growth_last_decade"] >= 9.9
    assert entry.data["boundary_grew_10x"]
    assert "in-theorem-range" in entry.detail


def test_localization_fails_when_interior_follows_boundary():
    entry = localization_check(localized_trajectory(True), T=1.0, in_theorem_range=False)
    assert entry.status == FAIL
    assert entry.measured > 1.5
    assert "out-of-theorem-range" in entry.detail


def test_localization_needs_a_time_decade():
    mesh = Mesh(9, 2, 0.5)
    traj = SolutionTrajectory(mesh, mesh.t, np.ones((3, mesh.x.size)), 1.5, 0.8, mesh.hx, [])
    assert localization_check(traj, T=1.0).status == NON_PROBATIVE


def test_localization_without_boundary_blowup_is_non_probative():
    mesh = Mesh(49, 200, 0.999, grading=0.5)
    u = np.outer(1.0 + mesh.t, np.ones(mesh.x.size))
    traj = SolutionTrajectory(mesh, mesh.t, u, 1.5, 0.8, mesh.hx, [])
    entry = localization_check(traj, T=1.0)
    assert entry.status == NON_PROBATIVE
    assert not entry.data["boundary_grew_10x"]
    assert entry.measured == pytest.approx(1.999 / (1.0 + entry.data["t_ref"]))


@pytest.mark.parametrize("factor, status", [(2.0, PASS), (20.0, FAIL)])
def test_amplitude_scaling(factor, status):
    entry = amplitude_scaling_check(power_profile(3.0), power_profile(3.0, scale=factor), 1.0, 2.0, EXPS,
                                    S_GRID[:3], PARAMS.beta, PARAMS.p, PARAMS.q)
    assert entry.status == status
    assert entry.measured == pytest.approx(factor)


def test_amplitude_scaling_on_null_reference():
    entry = amplitude_scaling_check(power_profile(3.0, scale=0.0), power_profile(3.0), 1.0, 2.0, EXPS,
                                    S_GRID[:3], PARAMS.beta, PARAMS.p, PARAMS.q)
    assert entry.status == NON_PROBATIVE


def report(weighted, theorem_status=PASS):
    rep = VerificationReport(scenario_id="refine")
    rep.add(CheckEntry(name="theorem1", status=theorem_status))
    rep.add(CheckEntry(name="weighted_diagnostic", status=PASS, measured=weighted))
    return rep


@pytest.mark.parametrize("coarse, fine, theorem_status, status", [
    (1.0, 1.05, PASS, PASS),
    (1.0, 1.5, PASS, FAIL),
    (1.0, 1.0, FAIL, FAIL),
])
def test_refinement_check(coarse, fine, theorem_status, status):
    entry = refinement_check(report(coarse), report(fine, theorem_status), drift_tol=0.1)
    assert entry.status == status


def test_report_collects_failures():
    rep = report(1.0, FAIL)
    assert rep.failures() == ["theorem1"]
    assert not rep.passed


@pytest.mark.parametrize("scale, status", [(1.03, PASS), (0.97, PASS), (1.1, FAIL)])
def test_energy_refinement_drift(scale, status):
    entry = energy_refinement_check(power_profile(3.0), power_profile(3.0, scale=scale))
    assert entry.status == status
    assert entry.measured == pytest.approx(abs(scale - 1.0), rel=1e-9)
    assert entry.data["s"] == S_GRID[middle_decade(S_GRID)].tolist()


def test_energy_refinement_without_shared_depths():
    shifted = EnergyProfile([0.0, 0.999], S_GRID * 1.01, power_profile(3.0).E, np.zeros((2, S_GRID.size)), 1.0)
    assert energy_refinement_check(power_profile(3.0), shifted).status == NON_PROBATIVE
