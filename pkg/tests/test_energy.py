import numpy as np
import pytest
from scipy.optimize import brentq

from src.energy import (EnergyProfile, LayerSequence, global_energy_precondition, calibrate_omega0,
                        check_qualified_monotonicity, energy_E, energy_h_sup, gamma_sequence, layered_energies,
                        t_prime, tabulate_profile, weighted_energy_diagnostic)
from src.exponents import ParameterError, ProblemParams, compute_exponents
from src.solver import Mesh, SolutionTrajectory

PARAMS = ProblemParams(p=1.5, q=0.8, beta=1.0, alpha1=0.9, xi=0.3, gamma=0.1, omega0=1.0)
S_TILDE = 0.05
AMPLITUDE = 0.5


def trajectory(u_of, nx=999, K=200, t_stop=1.0, p=1.0, q=1.0):
    mesh = Mesh(nx, K, t_stop, grading=1.0)
    u = np.stack([u_of(t, mesh.x) for t in mesh.t])
    return SolutionTrajectory(mesh, mesh.t, u, p, q, mesh.hx, [])


def power_law_profile(params=PARAMS, a=AMPLITUDE, n_levels=6000):
    # E = a omega0 ((T - t)^-alpha - T^-alpha), no mass term
    alpha = compute_exponents(params).alpha
    T = params.T
    t = T - T * np.geomspace(1.0, 1e-10, n_levels)
    E = a * params.omega0 * ((T - t) ** (-alpha) - T ** (-alpha))
    zeros = np.zeros_like(t)
    return EnergyProfile(t, [S_TILDE], E[:, None], zeros[:, None], T, E, zeros)


def self_similar_ratio(params=PARAMS, a=AMPLITUDE):
    alpha = compute_exponents(params).alpha
    k = a * params.xi ** alpha * params.T ** (params.resolved_alpha1() - alpha)
    return brentq(lambda r: r ** (-alpha) - k * ((1 - r) ** (-alpha) - 1), 1e-9, 1 - 1e-9, xtol=1e-15)


def test_zero_state_has_zero_energies():
    traj = trajectory(lambda t, x: np.zeros_like(x), nx=99, K=10)
    profile = tabulate_profile(traj, 1.0, [0.05, 0.25], progress=False)
    assert np.all(profile.E == 0) and np.all(profile.hsup == 0)
    assert profile.E_global[-1] == 0


@pytest.mark.parametrize("s", [0.05, 0.123, 0.3])
def test_static_linear_state_has_closed_form_energies(s):
    traj = trajectory(lambda t, x: x.copy(), K=20)
    assert energy_E(traj, 0.5, s) == pytest.approx(0.5 * (1 - 2 * s), rel=1e-10)
    assert energy_h_sup(traj, 0.5, s) == pytest.approx(((1 - s) ** 3 - s ** 3) / 3, rel=1e-5)


def test_growing_gradient_energy_is_time_integrated():
    traj = trajectory(lambda t, x: t * x, nx=99, K=200, p=2.0)
    for s in (0.1, 0.25):
        assert energy_E(traj, 1.0, s) == pytest.approx((1 - 2 * s) / 4, rel=1e-3)


def test_profile_is_nonincreasing_in_depth_and_round_trips(tmp_path):
    traj = trajectory(lambda t, x: (1 + t) * np.sin(np.pi * x), nx=199, K=20, p=1.5, q=0.8)
    profile = tabulate_profile(traj, 1.0, [0.02, 0.1, 0.2, 0.4], progress=False)
    assert profile.monotone_in_s()
    assert np.all(np.diff(profile.hsup, axis=0) >= 0)
    loaded = EnergyProfile.load(profile.save(str(tmp_path / "energy_profile.npz")))
    assert np.array_equal(loaded.E, profile.E) and loaded.T == 1.0


def test_depth_outside_collar_is_rejected():
    traj = trajectory(lambda t, x: x.copy(), nx=9, K=2)
    with pytest.raises(ValueError):
        tabulate_profile(traj, 1.0, [0.5], progress=False)


def test_queries_past_last_level_hold_last_value():
    profile = power_law_profile(n_levels=200)
    assert profile.E_at(profile.T, 0) == profile.E[-1, 0]
    assert profile.total_at(profile.T) == pytest.approx(profile.E_global[-1])


def test_gamma_sequence_matches_self_similar_oracle():
    profile = power_law_profile()
    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    r = self_similar_ratio()
    assert not seq.alternative
    assert seq.j0 >= 6
    expected = [r * (1 - r) ** j for j in range(5)]
    assert seq.delta[:5] == pytest.approx(expected, rel=1e-4)
    assert max(seq.identity_residual[:5]) < 1e-8
    assert seq.t[-2] <= seq.t_prime + 1e-12 < seq.t[-1] + 1e-12


def test_qualified_monotonicity_on_self_similar_layers():
    profile = power_law_profile()
    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    report = check_qualified_monotonicity(seq, PARAMS.xi, tol_ratio=0.05)
    r = self_similar_ratio()
    assert report["ratios"][:4] == pytest.approx([1 - r] * 4, rel=1e-3)
    assert report["passed"] and not report["vacuous"]
    assert not report["non_probative"]


def test_t_prime_lies_inside_horizon():
    profile = power_law_profile()
    tp = t_prime(profile, S_TILDE, PARAMS)
    assert 0 < tp < PARAMS.T


def test_small_energy_takes_alternative_case():
    t = np.linspace(0, 0.999, 50)
    small = 1e-3 * t
    profile = EnergyProfile(t, [S_TILDE], small[:, None], small[:, None], 1.0, small, small)
    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    assert seq.alternative and seq.j0 == 0
    assert seq.total_at_T <= seq.threshold


def test_gamma_sequence_needs_omega0():
    profile = power_law_profile(n_levels=50)
    with pytest.raises(ParameterError):
        gamma_sequence(profile, S_TILDE, PARAMS.copy(update={"omega0": None}))


def test_layered_energies_telescope():
    profile = power_law_profile()
    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    E_j, h_j = layered_energies(profile, seq)
    assert E_j.shape == (seq.j0, 1)
    assert E_j[:, 0].sum() == pytest.approx(profile.E_at(seq.t[-1], 0), rel=1e-12)
    assert np.all(h_j == 0)


def test_weighted_diagnostic_settles_on_self_similar_layers():
    profile = power_law_profile()
    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    diag = weighted_energy_diagnostic(profile, seq, PARAMS)
    assert diag["finite"]
    assert diag["per_layer"][4] == pytest.approx(diag["per_layer"][3], rel=1e-2)
    summed = np.add(diag["per_layer_U1"], diag["per_layer_U2"])
    assert diag["per_layer"] == pytest.approx(summed.tolist(), rel=1e-12)
    assert diag["constant"] == pytest.approx(summed.max(), rel=1e-12)


def test_weighted_diagnostic_adds_both_families_on_one_layer():
    profile = power_law_profile()
    seq = LayerSequence(s_tilde=S_TILDE, t=[0.0, 0.5], delta=[0.5])
    diag = weighted_energy_diagnostic(profile, seq, PARAMS)
    alpha = compute_exponents(PARAMS).alpha
    single = 0.5 ** alpha * profile.E_at(0.5, 0) / PARAMS.omega0
    assert diag["constant_U1"] == pytest.approx(single, rel=1e-12)
    assert diag["constant_U2"] == pytest.approx(single, rel=1e-12)
    assert diag["constant"] == pytest.approx(2 * single, rel=1e-12)


def test_weighted_diagnostic_of_empty_sequence_is_zero():
    profile = power_law_profile(n_levels=50)
    diag = weighted_energy_diagnostic(profile, LayerSequence(s_tilde=S_TILDE, alternative=True), PARAMS)
    assert diag["constant"] == 0.0 and diag["finite"]


def test_calibrated_omega0_satisfies_precondition():
    profile = power_law_profile(n_levels=400)
    omega0 = calibrate_omega0(profile, PARAMS)
    assert 0 < omega0 <= AMPLITUDE * 1.2
    assert global_energy_precondition(profile, PARAMS.with_omega0(omega0))["holds"]
    weak = global_energy_precondition(profile, PARAMS.with_omega0(omega0 / 10))
    assert not weak["holds"] and weak["max_ratio"] > 1

    seq = gamma_sequence(profile, S_TILDE, PARAMS)
    report = check_qualified_monotonicity(seq, PARAMS.xi, precondition=weak)
    assert report["non_probative"]


def layers(deltas):
    times = np.concatenate(([0.0], np.cumsum(deltas))).tolist()
    return LayerSequence(s_tilde=S_TILDE, t=times, delta=deltas)


def test_single_layer_passes_vacuously():
    report = check_qualified_monotonicity(layers([0.5]), 0.3)
    assert report["passed"] and report["vacuous"]
    assert report["max_ratio"] is None and report["tail_ratio"] is None


@pytest.mark.parametrize("deltas, passed", [
    ([0.5, 0.1], True),
    ([0.5, 0.4], False),
    ([0.6, 0.1, 0.05], False),
    ([0.6, 0.15, 0.03], True),
])
def test_closing_ratio_is_checked(deltas, passed):
    report = check_qualified_monotonicity(layers(deltas), 0.3)
    assert not report["vacuous"]
    assert report["passed"] is passed
    assert report["tail_ratio"] == pytest.approx(deltas[-1] / deltas[-2])
    assert report["max_ratio"] == pytest.approx(max(b / a for a, b in zip(deltas[:-1], deltas[1:])))
