# -*- coding:UTF-8 -*-
import os
import sys
import time
from multiprocessing import Pool

import numpy as np
from loguru import logger

from src.energy import (EnergyProfile, LayerSequence, UnresolvedRoot, global_energy_precondition, calibrate_omega0,
                        check_qualified_monotonicity, default_s_grid, gamma_sequence, tabulate_profile,
                        weighted_energy_diagnostic)
from src.exponents import ParameterError, compute_exponents, proof_exponents, validate_params, xi_bounds
from src.lemmas import (StampacchiaInput, lemma926_sweep, lemma_s_grid, minimal_premise_constant, power_table,
                        stampacchia_check)
from src.regime import budget_table, build_regime, effective_beta
from src.solver import AbortedRun, Mesh, load_trajectory, save_trajectory, solve
from src.verify import (FAIL, NON_PROBATIVE, PASS, SKIPPED, CheckEntry, InsufficientDecay, VerificationReport,
                        amplitude_scaling_check, corollary_profile_check, energy_refinement_check,
                        localization_check, refinement_check, theorem1_check)
from utils.config import RunConfig, load_config
from utils.helpers import (EXIT_ABORTED, EXIT_BAD_CONFIG, EXIT_INVALID_PARAMS, EXIT_OK, EXIT_VERIFY_FAIL,
                           RESOLVED_CONFIG_NAME, ConfigError, ensure_dir, read_json, write_csv, write_json,
                           write_manifest)

COMMANDS = ("exponents", "run", "verify", "lemmas", "all")
# conditions allowed to fail when beta >= beta0 (exploration runs)
EXPLORATION_TOLERATED = {"beta<beta0", "alpha1 in (1/p,alpha)", "lambda<1", "theta1<1", "theta2<1"}
LOG_FORMAT ="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function} - {message}"


def setup_logging(level="INFO"):
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)


def _key_value_table(rows: dict):
    keys, values = [], []
    for key, value in rows.items():
        keys.append(key)
        values.append(f"{value:.12g}" if isinstance(value, float) else str(value))
    return {"key": keys, "value": values}


class RunArtifacts:
    def __init__(self, params, regime, trajectory, profile, sequence, summary):
        self.params = params
        self.regime = regime
        self.trajectory = trajectory
        self.profile = profile
        self.sequence = sequence
        self.summary = summary


class Runner:
    def __init__(self, config: RunConfig, log_level="INFO"):
        self.config = config
        self.params = config.problem
        self.out_dir = ensure_dir(config.resolved_output_dir())
        self.fix_seed()
        self.log_sink = logger.add(os.path.join(self.out_dir, "run.log"), level=log_level, format=LOG_FORMAT)
        write_json(os.path.join(self.out_dir, RESOLVED_CONFIG_NAME), config.resolved())
        logger.info(f"scenario {config.scenario_id}: output directory {self.out_dir}")

    def fix_seed(self):
        self.rng = np.random.default_rng(self.config.seed)

    def close(self):
        write_manifest(self.out_dir)
        logger.remove(self.log_sink)

    def _path(self, name):
        return os.path.join(self.out_dir, name)

    def _validate(self):
        report = validate_params(self.params)
        write_json(self._path("validation.json"), report.dict())
        for item in report.failures():
            logger.error(f"condition {item.condition} violated ({item.detail})")
        return report

    def cmd_exponents(self):
        report = self._validate()
        # q <= 0, p <= q and beta <= 0 raise ParameterError -> exit 2; other failed conditions
        # exit 2 after the table is written unless only the exploration set fails
        exps = compute_exponents(self.params)
        rows = exps.table()
        rows.update(proof_exponents(self.params, exps))
        rows.update({f"xi_bound_{key}": value for key, value in xi_bounds(self.params, exps).items()})
        rows["validation_passed"] = report.passed
        rows["failed_conditions"] = "; ".join(item.name for item in report.failures())
        write_csv(self._path("exponents.csv"), _key_value_table(rows))
        logger.info(f"exponents: alpha={exps.alpha:.6g}, nu={exps.nu:.6g}, mu={exps.mu:.6g}")
        return EXIT_OK if self._runnable(report) else EXIT_INVALID_PARAMS

    def _runnable(self, report):
        failing = {item.name for item in report.failures()}
        if not failing:
            return True
        exps = compute_exponents(self.params) if report.get("p>q").passed and report.get("q>0").passed else None
        if exps is not None and exps.alpha > 0 and self.params.beta >= exps.beta0 \
                and failing <= EXPLORATION_TOLERATED:
            logger.warning(f"beta={self.params.beta:g} >= beta0={exps.beta0:g}: exploration run")
            return True
        return False

    def pipeline(self, config: RunConfig, out_dir) -> RunArtifacts:
        """Solve, tabulate and build the layer sequence for one config."""
        params = config.problem
        regime = build_regime(config.regime, params)
        mesh = Mesh.from_config(config.mesh, params.T)
        start = time.time()
        try:
            trajectory = solve(params, regime, mesh, config.solver)
        except AbortedRun as err:
            if err.trajectory is not None:
                save_trajectory(err.trajectory, out_dir, config.solver.checkpoint_format)
            raise
        logger.info(f"solve finished in {time.time() - start:.1f}s: {trajectory.newton_summary()}")

        columns, divergent = budget_table(regime, params, trajectory.t)
        write_csv(os.path.join(out_dir, "budget.csv"), columns)
        save_trajectory(trajectory, out_dir, config.solver.checkpoint_format)

        s_grid = default_s_grid(mesh.hx, config.energy)
        profile = tabulate_profile(trajectory, params.T, s_grid, config.energy, progress=config.solver.progress)
        profile.save(os.path.join(out_dir, "energy_profile.npz"))
        write_csv(os.path.join(out_dir, "energy_profile.csv"), profile.long_table())

        calibrated = params.omega0 is None
        if calibrated:
            params = params.with_omega0(calibrate_omega0(profile, params))
            logger.info(f"calibrated omega0={params.omega0:.6g}")
        summary = {
            "scenario_id": config.scenario_id,
            "omega0": params.omega0,
            "omega0_calibrated": calibrated,
            "omega0_eff_budget": float(columns["omega0_eff"][0]) if len(columns["omega0_eff"]) else 0.0,
            "budget_divergent": divergent,
            "kappa": regime.kappa,
            "beta_eff": effective_beta(regime, params),
            "trace_realization": "power trace f0 (T-t)^-kappa with piecewise-linear cutoff extension",
            "eps": trajectory.eps,
            "newton": trajectory.newton_summary(),
            "s_tilde": config.energy.s_tilde,
            "profile_monotone_in_s": profile.monotone_in_s(),
        }
        sequence = None
        try:
            sequence = gamma_sequence(profile, config.energy.s_tilde, params, config.energy)
        except UnresolvedRoot as err:
            logger.error(f"layer sequence unresolved: {err}")
            summary["gamma_error"] = str(err)
        if sequence is not None:
            summary["layers"] = sequence.dict()
            if sequence.j0:
                write_csv(os.path.join(out_dir, "gamma_sequence.csv"), sequence.table())
        write_json(os.path.join(out_dir, "run_summary.json"), summary)
        return RunArtifacts(params, regime, trajectory, profile, sequence, summary)

    def cmd_run(self):
        report = self._validate()
        if not self._runnable(report):
            return EXIT_INVALID_PARAMS
        try:
            self.pipeline(self.config, self.out_dir)
        except AbortedRun as err:
            logger.error(f"run aborted: {err}")
            return EXIT_ABORTED
        return EXIT_OK

    def load_artifacts(self, out_dir=None) -> RunArtifacts:
        out_dir = out_dir or self.out_dir
        summary_path = os.path.join(out_dir, "run_summary.json")
        if not os.path.exists(summary_path):
            raise ConfigError(f"no run artifacts in {out_dir}; execute the run command first")
        summary = read_json(summary_path)
        checkpoint = "trajectory.npz" if self.config.solver.checkpoint_format == "npz" else "trajectory.csv"
        trajectory = load_trajectory(os.path.join(out_dir, checkpoint))
        profile = EnergyProfile.load(os.path.join(out_dir, "energy_profile.npz"))
        params = self.config.problem.with_omega0(summary["omega0"])
        sequence = LayerSequence.parse_obj(summary["layers"]) if "layers" in summary else None
        regime = build_regime(self.config.regime, self.config.problem)
        return RunArtifacts(params, regime, trajectory, profile, sequence, summary)

    def checks(self, config: RunConfig, run: RunArtifacts) -> VerificationReport:
        exps = compute_exponents(config.problem)
        verify = config.verify
        report = VerificationReport(
            scenario_id=config.scenario_id,
            exponents=exps.dict(),
            tolerances=verify.dict(),
            provenance={"nx": config.mesh.nx, "K": config.mesh.K, "delta_stop": config.mesh.delta_stop,
                        "grading": config.mesh.grading, "eps": run.trajectory.eps,
                        "omega0": run.params.omega0, "omega0_calibrated": run.summary.get("omega0_calibrated"),
                        "energy": config.energy.dict()},
            notes=[
                "checks verify one-sided upper bounds; sharpness is never claimed",
                "the power trace is one admissible realization of the boundary regime",
                "sup h is taken over stored levels and linearly interpolated window ends",
                "barred sequences for arbitrary interior anchors are out of scope",
            ],
        )
        try:
            report.add(theorem1_check(run.profile, exps, config=verify, beta=config.problem.beta))
        except InsufficientDecay as err:
            report.add(CheckEntry(name="theorem1", status=NON_PROBATIVE, tolerance=verify.tol_slope, detail=str(err)))
        report.add(corollary_profile_check(run.trajectory, exps, verify))
        in_range = validate_params(config.problem).passed and run.summary.get("beta_eff", 1.0) > 0
        report.add(localization_check(run.trajectory, verify.s_interior, verify.growth_cap, T=config.problem.T,
                                      in_theorem_range=in_range, min_boundary_growth=verify.min_boundary_growth))
        report.add(CheckEntry(name="domain_monotonicity",
                              status=PASS if run.profile.monotone_in_s() else FAIL,
                              detail="E and sup h nonincreasing in s at every level"))
        self._layer_checks(report, config, run)
        if not in_range:
            report.notes.append(f"run is outside the theorem's range (beta_eff={run.summary.get('beta_eff'):.4g})")
        return report

    def _layer_checks(self, report, config, run):
        seq = run.sequence
        if seq is None:
            report.add(CheckEntry(name="qualified_monotonicity", status=NON_PROBATIVE,
                                  detail=run.summary.get("gamma_error", "no layer sequence")))
            return
        if seq.alternative:
            for name in ("qualified_monotonicity", "gamma_identity", "weighted_diagnostic"):
                report.add(CheckEntry(name=name, status=SKIPPED,
                                      detail=f"alternative case: E(T)+sup h={seq.total_at_T:.4g} "
                                             f"<= {seq.threshold:.4g}"))
            return
        worst = max(seq.identity_residual, default=0.0)
        report.add(CheckEntry(name="gamma_identity", status=PASS if worst < config.energy.tol_identity else FAIL,
                              measured=worst, bound=config.energy.tol_identity,
                              tolerance=config.energy.tol_identity,
                              detail=f"max relative identity residual {worst:.3e}",
                              data={"r_monotone": seq.r_monotone, "t_prime": seq.t_prime}))
        precondition = global_energy_precondition(run.profile, run.params)
        mono = check_qualified_monotonicity(seq, run.params.xi, config.energy.tol_ratio, precondition)
        if mono["non_probative"]:
            status = NON_PROBATIVE
        else:
            status = PASS if mono["passed"] else FAIL
        report.add(CheckEntry(name="qualified_monotonicity", status=status, measured=mono["max_ratio"],
                              bound=mono["limit"], tolerance=config.energy.tol_ratio, data=mono,
                              detail=f"j0={seq.j0}, max ratio {mono['max_ratio']}, tail ratio {mono['tail_ratio']}"))
        weighted = weighted_energy_diagnostic(run.profile, seq, run.params)
        report.add(CheckEntry(name="weighted_diagnostic", status=PASS if weighted["finite"] else FAIL,
                              measured=weighted["constant"], data=weighted,
                              detail=f"sup_j U_j Delta_j^(alpha-alpha1)/omega0 = {weighted['constant']:.6g}"))

    def _companion(self, name, update):
        out_dir = ensure_dir(os.path.join(self.out_dir, name))
        config = self.config.copy(update=update)
        config = config.copy(update={"output_dir": out_dir})
        logger.info(f"companion run {name} in {out_dir}")
        return config, self.pipeline(config, out_dir)

    def cmd_verify(self):
        run = self.load_artifacts()
        report = self.checks(self.config, run)
        verify = self.config.verify
        if verify.amplitude_check:
            regime = self.config.regime.copy(update={"f0": self.config.regime.f0 * verify.amplitude_factor})
            _, scaled = self._companion("amplitude", {"regime": regime})
            s_values = run.profile.s[(run.profile.s >= 0.05) & (run.profile.s <= 0.4)]
            report.add(amplitude_scaling_check(run.profile, scaled.profile, run.params.omega0, scaled.params.omega0,
                                               compute_exponents(self.config.problem), s_values,
                                               self.params.beta, self.params.p, self.params.q, verify.amplitude_tol))
        if verify.refinement_check:
            # hx halves exactly; the doubled floor factor keeps the coarse s grid
            mesh = self.config.mesh.copy(update={"nx": 2 * self.config.mesh.nx + 1, "K": 2 * self.config.mesh.K})
            energy = self.config.energy.copy(update={"s_min_factor": 2 * self.config.energy.s_min_factor})
            refined_config, refined = self._companion("refined", {"mesh": mesh, "energy": energy})
            refined_report = self.checks(refined_config, refined)
            write_json(os.path.join(self.out_dir, "refined", "verification_report.json"), refined_report.dict())
            report.add(refinement_check(report, refined_report, verify.drift_tol))
            report.add(energy_refinement_check(run.profile, refined.profile, verify.energy_drift_tol))

        write_json(self._path("verification_report.json"), report.dict())
        theorem = report.checks["theorem1"].data
        if theorem:
            write_csv(self._path("fit_energy.csv"), {"s": theorem["s"], "energy": theorem["energy"]})
        corollary = report.checks["corollary1"].data
        if corollary:
            write_csv(self._path("fit_profile.csv"), {"d": corollary["d"], "abs_u": corollary["abs_u"]})
        failures = report.failures()
        if failures:
            logger.error(f"verification FAILED: {', '.join(failures)}")
            return EXIT_VERIFY_FAIL
        logger.info("verification passed")
        return EXIT_OK

    def cmd_lemmas(self):
        lemmas = self.config.lemmas
        result = {"stampacchia": [], "lemma926": [], "profile": None}
        ok = True
        for fixture in lemmas.stampacchia:
            s, f = power_table(fixture.scale, fixture.power, fixture.s_lo, fixture.s0, fixture.per_decade)
            inp = StampacchiaInput(a=fixture.a, rho=fixture.rho, lam=fixture.lam, s0=fixture.s0,
                                   s=s.tolist(), f=f.tolist())
            check = stampacchia_check(inp)
            check["name"] = fixture.name
            check["expect_premise"] = fixture.expect_premise
            check["as_expected"] = fixture.expect_premise is None or check["premise_holds"] == fixture.expect_premise
            if check["premise_holds"] and not check["bound_holds"]:
                check["as_expected"] = False
            ok = ok and check["as_expected"]
            result["stampacchia"].append(check)
            logger.info(f"stampacchia {fixture.name}: premise={check['premise_holds']}, bound={check['bound_holds']}")

        s_grid = lemma_s_grid(lemmas.s_min, lemmas.s0, lemmas.per_decade)
        for sweep in lemmas.sweeps:
            outcome = lemma926_sweep(sweep, s_grid, self.rng, lemmas.eps_first, lemmas.ratio_low, lemmas.ratio_high,
                                     lemmas.tol_slope, lemmas.drift_tol, self.config.solver.progress)
            family = outcome.pop("headline_family")
            jj, ss = np.meshgrid(np.arange(1, family.shape[0] + 1), s_grid, indexing="ij")
            write_csv(self._path(f"lemma926_{sweep.name}.csv"),
                      {"j": jj.ravel(), "s": ss.ravel(), "M_j": family.ravel()})
            ok = ok and outcome["passed"]
            result["lemma926"].append(outcome)

        if lemmas.profile_check and os.path.exists(self._path("energy_profile.npz")):
            result["profile"] = self._profile_stampacchia()

        write_json(self._path("lemmas_report.json"), result)
        if not ok:
            logger.error("lemma suite has unexpected outcomes")
            return EXIT_VERIFY_FAIL
        return EXIT_OK

    def _profile_stampacchia(self):
        profile = EnergyProfile.load(self._path("energy_profile.npz"))
        exps = compute_exponents(self.params)
        proof = proof_exponents(self.params, exps)
        rho, lam = proof["stampacchia_rho"], proof["stampacchia_lambda"]
        values = np.array([profile.total_at(profile.t_final, m) for m in range(profile.s.size)])
        if not (0 < lam < 1) or np.any(np.diff(values) > 0) or not np.any(values > 0):
            logger.warning("run profile unsuitable for the Stampacchia check")
            return {"skipped": True, "rho": rho, "lambda": lam}
        a = minimal_premise_constant(profile.s, values, rho, lam)
        inp = StampacchiaInput(a=max(a, 1e-300), rho=rho, lam=lam, s0=float(profile.s[-1]),
                               s=profile.s.tolist(), f=values.tolist())
        check = stampacchia_check(inp)
        check.update({"skipped": False, "rho": rho, "lambda": lam, "a_min": a})
        logger.info(f"profile Stampacchia check: a_min={a:.4g}, bound holds={check['bound_holds']}")
        return check

    def cmd_all(self):
        for command in (self.cmd_exponents, self.cmd_run):
            code = command()
            if code != EXIT_OK:
                return code
        return max(self.cmd_verify(), self.cmd_lemmas())


def run_command(command, config_path, out=None, seed=None, log_level="INFO", nested_out=False):
    setup_logging(log_level)
    try:
        config = load_config(config_path, seed=seed)
        if out is not None:
            config = config.copy(update={"output_dir": os.path.join(out, config.scenario_id) if nested_out else out})
    except ConfigError as err:
        logger.error(str(err))
        return EXIT_BAD_CONFIG
    runner = Runner(config, log_level)
    try:
        return getattr(runner, f"cmd_{command}")()
    except ConfigError as err:
        logger.error(str(err))
        return EXIT_BAD_CONFIG
    except ParameterError as err:
        logger.error(str(err))
        return EXIT_INVALID_PARAMS
    except AbortedRun as err:
        logger.error(str(err))
        return EXIT_ABORTED
    finally:
        runner.close()


def dispatch(command, config_paths, out=None, workers=1, seed=None, log_level="INFO"):
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command}")
    nested = len(config_paths) > 1
    jobs = [(command, path, out, seed, log_level, nested) for path in config_paths]
    if workers > 1 and len(jobs) > 1:
        with Pool(processes=min(workers, len(jobs))) as pool:
            codes = pool.starmap(run_command, jobs)
    else:
        codes = [run_command(*job) for job in jobs]
    for path, code in zip(config_paths, codes):
        logger.info(f"{command} {path}: exit code {code}")
    return max(codes, default=EXIT_OK)
