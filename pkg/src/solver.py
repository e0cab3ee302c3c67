# -*- coding:UTF-8 -*-
import json
import math
import os

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import solve_banded
from tqdm import tqdm

from utils.config import SolverConfig
from utils.helpers import CSV_FLOAT_FORMAT, LabError


class NonConvergence(LabError):
    pass


class AbortedRun(LabError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class Mesh:
    """
    Uniform nodes on [0, 1] (boundary nodes included) and graded time levels
    t_k = t_stop * (1 - (1 - k/K)^(1/grading)), clustered toward t_stop.
    """

    def __init__(self, nx, K, t_stop, grading=0.5):
        if nx < 1 or K < 1:
            raise ValueError("mesh needs nx >= 1 interior nodes and K >= 1 steps")
        self.nx = int(nx)
        self.K = int(K)
        self.t_stop = float(t_stop)
        self.grading = float(grading)
        self.hx = 1.0 / (self.nx + 1)
        self.x = np.linspace(0.0, 1.0, self.nx + 2)
        k = np.arange(self.K + 1) / self.K
        self.t = self.t_stop * (1.0 - (1.0 - k) ** (1.0 / self.grading))
        self.t[-1] = self.t_stop

    @classmethod
    def from_config(cls, mesh_config, T):
        return cls(mesh_config.nx, mesh_config.K, T * (1.0 - mesh_config.delta_stop), mesh_config.grading)

    def refined(self):
        # halves h_x and every time step
        return Mesh(2 * self.nx + 1, 2 * self.K, self.t_stop, self.grading)


class SolutionTrajectory:
    def __init__(self, mesh, t, u, p, q, eps, stats):
        self.mesh = mesh
        self.t = np.asarray(t, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.p = float(p)
        self.q = float(q)
        self.eps = float(eps)
        self.stats = stats

    @property
    def x(self):
        return self.mesh.x

    @property
    def n_levels(self):
        return self.t.size

    def newton_summary(self):
        if not self.stats:
            return {"steps": 0, "iterations": 0, "substeps": 0, "fallback_steps": 0, "max_residual": 0.0}
        return {
            "steps": len(self.stats),
            "iterations": int(sum(item["iterations"] for item in self.stats)),
            "substeps": int(sum(item["substeps"] for item in self.stats)),
            "fallback_steps": int(sum(item["fallback"] for item in self.stats)),
            "max_residual": float(max(item["residual"] for item in self.stats)),
        }


def flux(g, p, eps=0.0):
    """(g^2 + eps^2)^((p-1)/2) * g: odd and increasing in g."""
    g = np.asarray(g, dtype=float)
    if eps < 0:
        raise ValueError("regularization eps must be nonnegative")
    if p == 1:
        return g.copy() if g.ndim else float(g)
    r2 = g * g + eps * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r2 > 0, r2 ** (0.5 * (p - 1)) * g, 0.0)
    return out if out.ndim else float(out)


def flux_derivative(g, p, eps=0.0):
    g = np.asarray(g, dtype=float)
    if p == 1:
        return np.ones_like(g)
    r2 = g * g + eps * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r2 > 0, r2 ** (0.5 * (p - 3)) * (p * g * g + eps * eps), 0.0)
    return out


def _lagged_coefficient(g, p, eps):
    if p == 1:
        return np.ones_like(g)
    r2 = g * g + eps * eps
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r2 > 0, r2 ** (0.5 * (p - 1)), 0.0)


class _Unknown:
    """
    Newton unknown w: v = |u|^(q-1) u when q < 1, u itself otherwise.
    """

    def __init__(self, q):
        self.q = q
        self.use_v = q < 1

    def to_u(self, w):
        if not self.use_v:
            return w
        return np.sign(w) * np.abs(w) ** (1.0 / self.q)

    def from_u(self, u):
        if not self.use_v:
            return u
        return np.sign(u) * np.abs(u) ** self.q

    def v_of(self, w):
        if self.use_v:
            return w
        return np.sign(w) * np.abs(w) ** self.q

    def du_dw(self, w):
        if not self.use_v:
            return np.ones_like(w)
        return np.abs(w) ** (1.0 / self.q - 1.0) / self.q

    def dv_dw(self, w):
        if self.use_v:
            return np.ones_like(w)
        if self.q == 1:
            return np.ones_like(w)
        return self.q * np.abs(w) ** (self.q - 1.0)


def _residual(w_int, u_left, u_right, v_prev, dt, hx, p, eps, unknown, source):
    u = np.concatenate(([u_left], unknown.to_u(w_int), [u_right]))
    g = np.diff(u) / hx
    fl = flux(g, p, eps)
    v = unknown.v_of(w_int)
    res = (v - v_prev) / dt - np.diff(fl) / hx - source
    scale = max(np.max(np.abs(v)) / dt, np.max(np.abs(fl)) / hx, np.max(np.abs(source)))
    return res, g, scale


def _banded_jacobian(w_int, g, dt, hx, p, eps, unknown, lagged):
    coeff = _lagged_coefficient(g, p, eps) if lagged else flux_derivative(g, p, eps)
    du = unknown.du_dw(w_int)
    left, right = coeff[:-1], coeff[1:]
    n = w_int.size
    ab = np.zeros((3, n))
    ab[1] = unknown.dv_dw(w_int) / dt + (left + right) / hx ** 2 * du
    ab[0, 1:] = -right[:-1] / hx ** 2 * du[1:]
    ab[2, :-1] = -left[1:] / hx ** 2 * du[:-1]
    return ab


def step(u_prev, dt, bc, p, q, hx, source=None, eps=0.0, config: SolverConfig = None):
    """
    One backward-Euler step of (|u|^(q-1)u)_t = (a(u_x))_x + source on the
    uniform grid; u_prev holds all nodes, bc the new boundary values. Damped
    Newton with a lagged-coefficient fallback; returns (u_new, stats).
    """
    config = config or SolverConfig()
    if dt <= 0:
        raise ValueError(f"time step must be positive, got dt={dt}")
    unknown = _Unknown(q)
    u_prev = np.asarray(u_prev, dtype=float)
    n = u_prev.size - 2
    src = np.zeros(n) if source is None else np.broadcast_to(np.asarray(source, dtype=float), (n,))
    v_prev = np.sign(u_prev[1:-1]) * np.abs(u_prev[1:-1]) ** q
    u_left, u_right = float(bc[0]), float(bc[1])

    w = unknown.from_u(u_prev[1:-1].copy())
    res, g, scale = _residual(w, u_left, u_right, v_prev, dt, hx, p, eps, unknown, src)
    norm = np.max(np.abs(res))
    fallback = False
    iterations = 0
    while norm > config.tol_abs + config.tol_rel * scale:
        if iterations >= config.max_iter:
            raise NonConvergence(f"Newton stalled at residual {norm:.3e} after {iterations} iterations "
                                 f"(dt={dt:.3e}); halve dt")
        iterations += 1
        accepted = False
        for lagged in (False, True):
            ab = _banded_jacobian(w, g, dt, hx, p, eps, unknown, lagged)
            try:
                delta = solve_banded((1, 1), ab, -res)
            except (np.linalg.LinAlgError, ValueError):
                continue
            if not np.all(np.isfinite(delta)):
                continue
            damping = 1.0
            while damping >= config.min_damping:
                trial = w + damping * delta
                trial_res, trial_g, trial_scale = _residual(trial, u_left, u_right, v_prev, dt, hx, p, eps, unknown, src)
                trial_norm = np.max(np.abs(trial_res))
                if np.isfinite(trial_norm) and trial_norm < norm:
                    w, res, g, scale, norm = trial, trial_res, trial_g, trial_scale, trial_norm
                    accepted = True
                    break
                damping *= 0.5
            if accepted:
                fallback = fallback or lagged
                break
        if not accepted:
            raise NonConvergence(f"no descent direction at residual {norm:.3e} (dt={dt:.3e}); halve dt")

    u_new = np.concatenate(([u_left], unknown.to_u(w), [u_right]))
    return u_new, {"iterations": iterations, "residual": float(norm), "fallback": fallback}


def _advance(u, t_a, t_b, p, q, hx, x_int, eps, config, boundary, source, depth=0):
    dt = t_b - t_a
    src = None if source is None else source(t_b, x_int)
    try:
        u_new, info = step(u, dt, boundary(t_b), p, q, hx, source=src, eps=eps, config=config)
        info["substeps"] = 1
        return u_new, info
    except NonConvergence as err:
        if 0.5 * dt < config.dt_min:
            raise
        logger.warning(f"halving dt={dt:.3e} at t={t_a:.9g} (depth {depth + 1}): {err}")
    t_mid = 0.5 * (t_a + t_b)
    u_mid, first = _advance(u, t_a, t_mid, p, q, hx, x_int, eps, config, boundary, source, depth + 1)
    u_new, second = _advance(u_mid, t_mid, t_b, p, q, hx, x_int, eps, config, boundary, source, depth + 1)
    return u_new, {
        "iterations": first["iterations"] + second["iterations"],
        "residual": max(first["residual"], second["residual"]),
        "fallback": first["fallback"] or second["fallback"],
        "substeps": first["substeps"] + second["substeps"],
    }


def solve(params, regime, mesh: Mesh, config: SolverConfig = None, u0=None, source=None, boundary=None):
    """
    March the scheme over every mesh level. boundary(t) -> (left, right) defaults
    to the regime trace; source(t, x_interior) is optional. On dt underflow an
    AbortedRun carries the trajectory up to the last accepted level.
    """
    config = config or SolverConfig()
    if boundary is None:
        if regime is None:
            raise ValueError("solve needs a boundary regime or an explicit boundary function")
        boundary = regime.boundary_values
    if u0 is None:
        if regime is None:
            raise ValueError("solve needs initial data when no regime is given")
        u0 = regime.initial_data(mesh.x)
    eps = mesh.hx if config.eps is None else config.eps
    p, q = params.p, params.q

    u = np.empty((mesh.K + 1, mesh.nx + 2))
    u[0] = np.asarray(u0, dtype=float)
    u[0, 0], u[0, -1] = boundary(mesh.t[0])
    x_int = mesh.x[1:-1]
    stats = []
    logger.info(f"solve: p={p:g}, q={q:g}, nx={mesh.nx}, K={mesh.K}, t_stop={mesh.t_stop:.9g}, eps={eps:.3e}")
    for k in tqdm(range(mesh.K), desc="time levels", disable=not config.progress):
        try:
            u[k + 1], info = _advance(u[k], mesh.t[k], mesh.t[k + 1], p, q, mesh.hx, x_int, eps,
                                      config, boundary, source)
        except NonConvergence as err:
            partial = SolutionTrajectory(mesh, mesh.t[:k + 1], u[:k + 1].copy(), p, q, eps, stats)
            raise AbortedRun(f"dt fell below dt_min={config.dt_min:g} after level {k} "
                             f"(t={mesh.t[k]:.9g}): {err}", trajectory=partial) from err
        stats.append(info)
        if info["iterations"] > 0:
            logger.debug(f"level {k + 1}: {info['iterations']} Newton iterations, "
                         f"residual {info['residual']:.3e}, substeps {info['substeps']}")
    return SolutionTrajectory(mesh, mesh.t.copy(), u, p, q, eps, stats)


class ManufacturedSolution:
    def __init__(self, name, exact, source):
        self.name = name
        self.exact = exact
        self.source = source

    def boundary(self, t):
        return float(self.exact(t, 0.0)), float(self.exact(t, 1.0))


def manufactured_source(name):
    """
    Heat-equation (p = q = 1) manufactured problems:
    linear_in_time    u = (1+t) sin(pi x), exact in time for backward Euler
    quadratic_in_time u = (1+t^2) sin(pi x)
    decaying          u = exp(-pi^2 t) sin(pi x), no source
    """
    pi2 = math.pi ** 2
    if name == "linear_in_time":
        return ManufacturedSolution(
            name,
            lambda t, x: (1.0 + t) * np.sin(np.pi * np.asarray(x)),
            lambda t, x: np.sin(np.pi * np.asarray(x)) * (1.0 + pi2 * (1.0 + t)),
        )
    if name == "quadratic_in_time":
        return ManufacturedSolution(
            name,
            lambda t, x: (1.0 + t * t) * np.sin(np.pi * np.asarray(x)),
            lambda t, x: np.sin(np.pi * np.asarray(x)) * (2.0 * t + pi2 * (1.0 + t * t)),
        )
    if name == "decaying":
        return ManufacturedSolution(
            name,
            lambda t, x: np.exp(-pi2 * t) * np.sin(np.pi * np.asarray(x)),
            None,
        )
    raise KeyError(f"unknown manufactured problem {name}")


def observed_order(errors, sizes):
    errors = np.asarray(errors, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(sizes[:-1] / sizes[1:])


def save_trajectory(traj: SolutionTrajectory, out_dir, fmt="npz"):
    header = {
        "nx": traj.mesh.nx,
        "K": traj.mesh.K,
        "t_stop": traj.mesh.t_stop,
        "grading": traj.mesh.grading,
        "p": traj.p,
        "q": traj.q,
        "eps": traj.eps,
        "levels": int(traj.n_levels),
    }
    if fmt == "npz":
        path = os.path.join(out_dir, "trajectory.npz")
        with open(path, "wb") as fw:
            np.savez(fw, t=traj.t, x=traj.x, u=traj.u, header=json.dumps(header, sort_keys=True))
    elif fmt == "csv":
        path = os.path.join(out_dir, "trajectory.csv")
        frame = pd.DataFrame(traj.u, columns=[f"u{i}" for i in range(traj.u.shape[1])])
        frame.insert(0, "t", traj.t)
        with open(path, "w", encoding="utf8") as fw:
            fw.write("# " + json.dumps(header, sort_keys=True) + "\n")
            frame.to_csv(fw, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    else:
        raise ValueError(f"unknown checkpoint format {fmt}")
    logger.info(f"trajectory checkpoint written to {path}")
    return path


def load_trajectory(path) -> SolutionTrajectory:
    if path.endswith(".npz"):
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            t, u = data["t"], data["u"]
    else:
        with open(path, "r", encoding="utf8") as fr:
            header = json.loads(fr.readline()[2:])
        frame = pd.read_csv(path, comment="#")
        t = frame["t"].to_numpy()
        u = frame.drop(columns="t").to_numpy()
    mesh = Mesh(header["nx"], header["K"], header["t_stop"], header["grading"])
    return SolutionTrajectory(mesh, t, u, header["p"], header["q"], header["eps"], [])
