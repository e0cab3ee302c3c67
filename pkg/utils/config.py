# -*- coding:UTF-8 -*-
import json
import os
from typing import List, Optional

from pydantic import BaseModel, ValidationError, validator

from src.exponents import ProblemParams
from utils.helpers import ConfigError


class _Section(BaseModel):
    class Config:
        extra = "forbid"
        validate_assignment = True


class RegimeConfig(_Section):
    # None -> kappa = alpha/(q+1) * (1 - eps_cal)
    kappa: Optional[float] = None
    eps_cal: float = 0.05
    f0: float = 1.0
    cutoff_width: float = 0.1
    one_sided: bool = False

    @validator("cutoff_width")
    def _width_in_collar(cls, value):
        if not 0 < value < 0.5:
            raise ValueError("cutoff_width must lie in (0, 1/2)")
        return value

    @validator("f0")
    def _nonnegative_amplitude(cls, value):
        if value < 0:
            raise ValueError("trace amplitude f0 must be nonnegative")
        return value


class MeshConfig(_Section):
    nx: int = 2000
    K: int = 5000
    # T_stop = T * (1 - delta_stop)
    delta_stop: float = 1e-3
    grading: float = 0.5

    @validator("nx", "K")
    def _positive_count(cls, value):
        if value < 1:
            raise ValueError("node and level counts must be positive")
        return value

    @validator("delta_stop")
    def _stop_before_blowup(cls, value):
        if not 0 < value < 1:
            raise ValueError("delta_stop must lie in (0, 1)")
        return value

    @validator("grading")
    def _grading_range(cls, value):
        if not 0 < value <= 1:
            raise ValueError("grading exponent must lie in (0, 1]")
        return value


class SolverConfig(_Section):
    # None -> eps = h_x
    eps: Optional[float] = None
    tol_abs: float = 1e-10
    tol_rel: float = 1e-9
    max_iter: int = 40
    min_damping: float = 1.0 / 64
    dt_min: float = 1e-14
    checkpoint_format: str = "npz"
    progress: bool = True

    @validator("checkpoint_format")
    def _known_format(cls, value):
        if value not in ("npz", "csv"):
            raise ValueError("checkpoint_format must be 'npz' or 'csv'")
        return value


class EnergyConfig(_Section):
    s_min_factor: float = 4.0
    s_max: float = 0.4
    per_decade: int = 24
    s_tilde: float = 0.05
    root_xtol: float = 1e-14
    tol_ratio: float = 0.05
    tol_identity: float = 1e-8
    max_layers: int = 500
    chunk: int = 256


class VerifyConfig(_Section):
    tol_slope: float = 0.05
    growth_cap: float = 1.5
    s_interior: float = 0.25
    flat_tol: float = 1e-3
    profile_window: List[float] = [4.0, 40.0]
    amplitude_check: bool = False
    amplitude_factor: float = 2.0
    amplitude_tol: float = 0.25
    refinement_check: bool = False
    drift_tol: float = 0.1
    energy_drift_tol: float = 0.05
    min_boundary_growth: float = 10.0

    @validator("s_interior")
    def _interior_depth_inside(cls, value):
        if not 0 < value < 0.5:
            raise ValueError("s_interior must lie in (0, 1/2)")
        return value


class StampacchiaFixture(_Section):
    name: str
    # f(s) = scale * s^(-power); scale = 0 gives the zero fixture
    power: float = 2.0
    scale: float = 1.0
    a: float = 1.0
    rho: float = 1.0
    lam: float = 0.5
    s_lo: float = 1e-3
    s0: float = 1.0
    per_decade: int = 32
    expect_premise: Optional[bool] = None


class Lemma926Sweep(_Section):
    name: str
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    delta: float = 0.5
    gamma1: float = 1.0
    gamma2: float = 2.0
    lam: float = 0.5
    j0: int = 30
    j0_values: List[int] = [15, 30, 60]
    n_sequences: int = 3


def _default_fixtures():
    return [
        StampacchiaFixture(name="zero", scale=0.0, expect_premise=True),
        StampacchiaFixture(name="inverse_square", power=2.0, expect_premise=True),
        StampacchiaFixture(name="inverse_cube", power=3.0, expect_premise=False),
    ]


def _default_sweeps():
    return [Lemma926Sweep(name="delta0.5_gamma1")]


class LemmaConfig(_Section):
    # None -> built-in fixtures and sweep; an explicit [] disables them
    stampacchia: Optional[List[StampacchiaFixture]] = None
    sweeps: Optional[List[Lemma926Sweep]] = None
    s_min: float = 1e-9
    s0: float = 1.0
    per_decade: int = 60
    eps_first: float = 0.5
    ratio_low: float = 0.4
    ratio_high: float = 0.6
    tol_slope: float = 0.05
    drift_tol: float = 0.1
    profile_check: bool = True

    @validator("stampacchia", pre=True, always=True)
    def _fixtures_default(cls, value):
        return _default_fixtures() if value is None else value

    @validator("sweeps", pre=True, always=True)
    def _sweeps_default(cls, value):
        return _default_sweeps() if value is None else value


class RunConfig(_Section):
    scenario_id: str
    seed: int = 0
    output_dir: Optional[str] = None
    problem: ProblemParams
    regime: RegimeConfig = RegimeConfig()
    mesh: MeshConfig = MeshConfig()
    solver: SolverConfig = SolverConfig()
    energy: EnergyConfig = EnergyConfig()
    verify: VerifyConfig = VerifyConfig()
    lemmas: LemmaConfig = LemmaConfig()

    def resolved_output_dir(self):
        return self.output_dir if self.output_dir else os.path.join("runs", self.scenario_id)

    def resolved(self):
        return json.loads(self.json())


def load_config(path, output_dir=None, seed=None) -> RunConfig:
    try:
        config = RunConfig.parse_file(path)
    except ValidationError as err:
        raise ConfigError(f"invalid config {path}: {err}") from err
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    update = {}
    if output_dir is not None:
        update["output_dir"] = output_dir
    if seed is not None:
        update["seed"] = seed
    return config.copy(update=update) if update else config
