import math
import os

import pytest

from src.cli import run_command
from src.exponents import ProblemParams, compute_exponents
from utils.helpers import CONFIG_DIR, EXIT_OK, EXIT_VERIFY_FAIL, read_json

pytestmark = pytest.mark.slow

ACCEPTANCE = ProblemParams(p=1.5, q=0.8, beta=1.0, alpha1=0.9)


def scenario(name):
    return os.path.join(CONFIG_DIR, f"{name}.json")


def verified(name, out):
    assert run_command("run", scenario(name), out=out) == EXIT_OK
    code = run_command("verify", scenario(name), out=out)
    return code, read_json(os.path.join(out, "verification_report.json"))["checks"]


def test_acceptance_scenario_passes(tmp_path):
    exps = compute_exponents(ACCEPTANCE)
    code, checks = verified("acceptance", str(tmp_path / "acceptance"))
    assert code == EXIT_OK

    assert checks["theorem1"]["status"] == "PASS"
    assert checks["theorem1"]["measured"] <= exps.nu * 1.05
    assert checks["corollary1"]["status"] == "PASS"
    assert not checks["corollary1"]["data"]["non_probative"]
    assert checks["corollary1"]["measured"] <= exps.mu * 1.05

    localization = checks["localization"]
    assert localization["status"] == "PASS"
    assert localization["data"]["boundary_grew_10x"]
    assert localization["measured"] <= 1.5

    assert checks["qualified_monotonicity"]["status"] == "PASS"
    assert checks["gamma_identity"]["status"] == "PASS"
    assert checks["weighted_diagnostic"]["status"] == "PASS"
    assert math.isfinite(checks["weighted_diagnostic"]["measured"])


def test_supercritical_control_fails_localization(tmp_path):
    code, checks = verified("control_supercritical", str(tmp_path / "control"))
    assert code == EXIT_VERIFY_FAIL
    localization = checks["localization"]
    assert localization["status"] == "FAIL"
    assert localization["data"]["boundary_grew_10x"]
    assert "out-of-theorem-range" in localization["detail"]


def test_acceptance_refinement_and_amplitude_companions(tmp_path):
    out = str(tmp_path / "acceptance_full")
    code, checks = verified("acceptance_full", out)
    assert code == EXIT_OK
    assert checks["refinement"]["status"] == "PASS"
    assert checks["refinement_energy"]["status"] == "PASS"
    assert checks["refinement_energy"]["measured"] < 0.05
    assert checks["amplitude_scaling"]["status"] == "PASS"
    assert os.path.exists(os.path.join(out, "refined", "verification_report.json"))
