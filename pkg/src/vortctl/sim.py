"""Time marching of the target, controlled and observer vorticity systems.

Both the target ``w_t`` and the second trajectory ``w`` obey

    M dw/dt + nu K w + C(w) = F(t) + M V u(t),      w = g(t) on the boundary,

with ``C`` the skew-symmetric convection load and ``u`` the feedback
coordinates (zero for the target and in free mode).  The integrator is
first-order IMEX Euler: diffusion and Dirichlet data implicit, convection
explicit.  The feedback is linear in ``z = w - w_t`` and of rank ``M_sigma``;
by default (``feedback_scheme="implicit"``) it is taken at the new time
level, which costs one Woodbury correction per step,

    (M + dt nu K - dt M K_fb) w^{n+1} = M w^n + dt [F(t^{n+1}) - C(w^n) - M K_fb w_t^{n+1}],

because at large gains ``lambda`` the explicit variant (``"explicit"``,
``u^n`` from ``z^n``) is only stable for very small steps.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .actuators import (ActuatorFamily, ActuatorLayout, family_mesh, rectangle_layout,
                        triangle_layout)
from .control import FeedbackOperator
from .fem import QUADRATURE, DirichletSystem, FEMSpace
from .mesh import DomainSpec, Mesh
from .vorticity import Vorticity

DEFAULT_TRIANGLE = ((0.0, 0.0), (1.0, 0.0), (1.0 / 3.0, 2.0 / 3.0))
T_STEP = 4e-4
MODES = ("free", "controlled", "observer")


class SimulationError(RuntimeError):
    """Non-finite or exploding state during time marching."""


def _sign(x):
    # sign(0) = 0
    return np.sign(x)


def forcing_example1(t, x1, x2):
    """Moving-discontinuity forcing ``2 cos 2t sign(x1 - .3 + .1 cos 4t) sign(x2 - .3 + .1 sin 4t)``."""
    return (2.0 * np.cos(2.0 * t) * _sign(x1 - 0.3 + 0.1 * np.cos(4.0 * t))
            * _sign(x2 - 0.3 + 0.1 * np.sin(4.0 * t)))


def w0_example1(x1, x2):
    return -2.0 * np.sin(3.0 * x1) + 1.0 + 0.0 * x2


def w0_example2(x1, x2):
    return -10.0 * np.sin(3.0 * x1) * np.sin(4.0 * x2) + 5.0


def w_exact_example2(t, x1, x2):
    return np.sin(2.0 * t) * (x1 - 0.4) + 0.0 * x2


def dw_exact_example2(t, x1, x2):
    return 2.0 * np.cos(2.0 * t) * (x1 - 0.4) + 0.0 * x2


def _zero(*args):
    return 0.0 * args[-1]


@dataclass
class ProblemData:
    """Forcing, boundary data and initial states of an experiment.

    `f` and `g` are pointwise ``(t, x1, x2)`` callables; `extra_load`, when
    given, builds a space-dependent load ``t -> vector`` added to the
    quadrature of `f`.
    """

    name: str
    f: Callable
    w0: Callable
    wt0: Callable
    g: Callable | None = None
    exact: Callable | None = None
    quad_degree: int = 5
    extra_load: Callable | None = None


def example1() -> ProblemData:
    return ProblemData("example1", forcing_example1, w0_example1, _zero, None, None, 5)


def forcing_example2(nu: float, convection_factor: float | None = None) -> ProblemData:
    """Manufactured data whose free dynamics is solved by ``sin(2t)(x1 - 0.4)``.

    ``f = d/dt w_exa - Lap w_exa + c curl*(A^-1 w_exa) . grad w_exa`` with
    ``Lap w_exa = 0``.  ``c`` defaults to the preset's reference value
    ``1/nu``; only ``c = 1`` makes ``w_exa`` an exact solution of the
    simulated equation.
    ``A^-1`` is the discrete inverse on the simulation mesh.
    """
    c = 1.0 / nu if convection_factor is None else float(convection_factor)

    def extra(space: FEMSpace, vort: Vorticity):
        mesh = space.mesh
        psi = vort.stream_function(mesh.interpolate(lambda a, b: a - 0.4))
        u = vort.velocity_of_stream(psi)
        # curl*(Psi) . grad(x1 - 0.4) = u1, constant per triangle; (u1, phi_i) = u1 area / 3
        local = np.repeat((u[:, 0] * mesh.areas / 3.0)[:, None], 3, axis=1)
        base = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
        return lambda t: (c * np.sin(2.0 * t) ** 2) * base

    data = ProblemData("example2", dw_exact_example2, w0_example2, _zero, w_exact_example2,
                       w_exact_example2, 2, extra)
    data.convection_factor = c
    return data


class BoundData:
    """Problem data evaluated on a particular space."""

    def __init__(self, data: ProblemData, space: FEMSpace, vort: Vorticity):
        self.data = data
        mesh = space.mesh
        lam, w = QUADRATURE[data.quad_degree]
        p = mesh.nodes[mesh.triangles]
        xq = np.einsum("qk,tkd->tqd", lam, p).reshape(-1, 2)
        self.xq = xq
        nq = len(w)
        weights = (mesh.areas[:, None, None] * w[None, :, None] * lam[None, :, :])  # (T, Q, 3)
        rows = np.repeat(mesh.triangles[:, None, :], nq, axis=1).ravel()
        cols = np.repeat(np.arange(mesh.n_triangles * nq), 3)
        self.Q = sp.csr_matrix((weights.ravel(), (rows, cols)), shape=(mesh.n_nodes, len(xq)))
        self.extra = data.extra_load(space, vort) if data.extra_load else None
        self.bnodes = mesh.boundary_nodes
        self.mesh = mesh

    def load(self, t: float) -> np.ndarray:
        v = self.Q @ (np.asarray(self.data.f(t, self.xq[:, 0], self.xq[:, 1]), dtype=float)
                      * np.ones(len(self.xq)))
        if self.extra is not None:
            v = v + self.extra(t)
        return v

    def boundary(self, t: float) -> np.ndarray | None:
        if self.data.g is None:
            return None
        x = self.mesh.nodes[self.bnodes]
        return np.asarray(self.data.g(t, x[:, 0], x[:, 1]), dtype=float) * np.ones(len(x))

    def initial(self) -> tuple[np.ndarray, np.ndarray]:
        w0 = self.mesh.interpolate(self.data.w0)
        wt0 = self.mesh.interpolate(self.data.wt0)
        g0 = self.boundary(0.0)
        if g0 is not None:
            # initial data must match the boundary data
            w0[self.bnodes] = g0
            wt0[self.bnodes] = g0
        return w0, wt0


@dataclass
class SimConfig:
    """Experiment configuration (physical time throughout)."""

    preset: str = "example1"
    nu: float = 0.01
    dt: float | None = None
    t_end: float = 24.0
    mode: str = "free"
    lam: float = 1.0
    M: int = 1
    domain: str = "triangle"
    triangle: tuple = DEFAULT_TRIANGLE
    L1: float = 1.0
    L2: float = 1.0
    r: float = 0.3
    fraction: float = 0.3
    mesh_level: int = 1
    mesh_h: float | None = None
    snapshot_times: tuple = ()
    stride: int = 1
    feedback_scheme: str = "implicit"
    convection: bool = True
    convection_factor: float | None = None
    overflow: float = 1e8
    data: ProblemData | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.dt is None:
            self.dt = T_STEP * 2.0 ** (-self.mesh_level)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        if self.mode != "free" and self.M < 1:
            raise ValueError("controlled and observer modes need M >= 1")
        if self.feedback_scheme not in ("explicit", "implicit"):
            raise ValueError("feedback_scheme must be 'explicit' or 'implicit'")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def problem(self) -> ProblemData:
        if self.data is not None:
            return self.data
        if self.preset == "example1":
            return example1()
        if self.preset == "example2":
            return forcing_example2(self.nu, self.convection_factor)
        raise ValueError(f"preset {self.preset!r} needs explicit problem data")

    def domain_spec(self) -> DomainSpec:
        if self.domain == "triangle":
            return DomainSpec.triangle(*self.triangle)
        if self.domain == "rectangle":
            return DomainSpec.rectangle(self.L1, self.L2)
        raise ValueError(f"unknown domain {self.domain!r}")

    def layout(self) -> ActuatorLayout | None:
        if self.M < 1:
            return None
        if self.domain == "triangle":
            return triangle_layout(self.triangle, self.M, self.fraction)
        return rectangle_layout(self.L1, self.L2, self.r, self.M)


@dataclass
class DecayFit:
    rate: float
    t_start: float
    t_stop: float
    n_samples: int
    floor_hit: bool
    threshold: float


def estimate_decay(t, norms, floor_factor: float = 100.0) -> DecayFit:
    """Least-squares exponential rate of ``norms`` over the window above the round-off floor.

    The window is the initial stretch where ``norm > floor_factor * eps * norm[0]``;
    `floor_hit` reports whether the series ever drops to that level.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(norms, dtype=float)
    if len(t) != len(z) or len(z) == 0:
        raise ValueError("time and norm series must be non-empty and of equal length")
    thresh = floor_factor * np.finfo(float).eps * z[0]
    below = np.flatnonzero(~(z > thresh))
    stop = below[0] if len(below) else len(z)
    if stop < 10:
        raise ValueError("fewer than 10 samples above the round-off floor")
    slope = np.polyfit(t[:stop], np.log(z[:stop]), 1)[0]
    return DecayFit(float(-slope), float(t[0]), float(t[stop - 1]), int(stop), bool(len(below)), float(thresh))


@dataclass
class SimRun:
    """Trajectory record of one paired run."""

    config: SimConfig
    mesh: Mesh
    t: np.ndarray
    norm_z: np.ndarray
    norm_wt: np.ndarray
    norm_w: np.ndarray
    norm_u: np.ndarray
    norm_wt_V: np.ndarray
    controls: np.ndarray
    snapshots: dict
    error_exact: np.ndarray | None = None
    error_exact_w: np.ndarray | None = None
    final_w: np.ndarray | None = None
    final_wt: np.ndarray | None = None
    states_w: list | None = field(default=None, repr=False)
    states_wt: list | None = field(default=None, repr=False)

    @property
    def decay(self) -> DecayFit:
        return estimate_decay(self.t, self.norm_z)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,norm_z_H,norm_wt_H,norm_w_H,norm_u,norm_wt_V\n")
        for row in zip(self.t, self.norm_z, self.norm_wt, self.norm_w, self.norm_u, self.norm_wt_V):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()

    def controls_csv(self) -> str:
        buf = io.StringIO()
        k = self.controls.shape[1]
        buf.write("t," + ",".join(f"u_{j + 1}" for j in range(k)) + "\n")
        for ti, u in zip(self.t, self.controls):
            buf.write(",".join(f"{v:.17g}" for v in (ti, *u)) + "\n")
        return buf.getvalue()

    def error_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,err_wt_exact_H,err_w_exact_H\n")
        for row in zip(self.t, self.error_exact, self.error_exact_w):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


class Simulator:
    """Paired target / second-trajectory integrator for a :class:`SimConfig`."""

    def __init__(self, cfg: SimConfig, mesh: Mesh | None = None):
        self.cfg = cfg
        self.domain = cfg.domain_spec()
        self.layout = cfg.layout()
        if mesh is None:
            mesh = family_mesh(self.domain, self.layout, cfg.mesh_level, cfg.mesh_h)
        self.mesh = mesh
        self.space = FEMSpace(mesh)
        self.vort = Vorticity(self.space)
        self.family = ActuatorFamily(self.layout, mesh) if self.layout is not None else None
        use_fb = cfg.mode != "free" and self.family is not None
        self.feedback = FeedbackOperator(self.family, self.space, cfg.lam) if use_fb else None
        self.data = BoundData(cfg.problem(), self.space, self.vort)
        M, K = self.space.M, self.space.K
        self.system = DirichletSystem(mesh, (M + (cfg.dt * cfg.nu) * K).tocsr())
        self.system.solver  # factorize once
        self._woodbury = None
        if self.feedback is not None and cfg.feedback_scheme == "implicit":
            self._prepare_implicit()

    def _prepare_implicit(self):
        # (S_II - U C W^T) with U = W = (M V)_I and C = dt * gain
        I = self.system.interior
        U = self.feedback.MV[I]
        Y = np.column_stack([self.system.solver.solve(U[:, j]) for j in range(U.shape[1])])
        C = self.cfg.dt * self.feedback.gain
        small = np.eye(C.shape[0]) - C @ (U.T @ Y)
        self._woodbury = (U, Y, C, np.linalg.inv(small))

    def convection(self, w):
        if not self.cfg.convection:
            return np.zeros_like(w)
        return self.vort.convection(w)

    def step(self, w, t, control_load=None, implicit_offset=None, forcing=None):
        """Advance one IMEX Euler step from time `t`.

        `forcing` optionally passes a precomputed ``(load, boundary values)``
        pair at ``t + dt``.
        """
        dt = self.cfg.dt
        load, g = forcing if forcing is not None else (self.data.load(t + dt), self.data.boundary(t + dt))
        rhs = self.space.M @ w + dt * (load - self.convection(w))
        if control_load is not None:
            rhs = rhs + dt * control_load
        if self._woodbury is not None and implicit_offset is not None:
            b = self.system.reduce(rhs, g) + dt * implicit_offset
            U, Y, C, inv = self._woodbury
            y = self.system.solver.solve(b, check=False)
            x = y + Y @ (inv @ (C @ (U.T @ y)))
            w_new = self.system.extend(x, g)
        else:
            w_new = self.system.solve(rhs, g, check=False)
        return w_new

    def _guard(self, w, ref, t):
        n = np.linalg.norm(w)
        if not np.isfinite(n) or n > self.cfg.overflow * (ref + 1.0):
            raise SimulationError(f"state blew up at t = {t:.6g} (|w| = {n:.3e})")

    def run_pair(self, measurements: Callable | None = None, keep_states: bool = False) -> SimRun:
        """March target and second trajectory to ``t_end``.

        In observer mode the feedback sees the target only through the
        sensor outputs ``s_j = (w_t, phi_j)_H``; `measurements` may supply
        them as ``(step_index, t) -> s`` (by default they are read off the
        target computed alongside).  `keep_states` stores both fields at
        every recorded row (memory heavy; meant for short runs).
        """
        cfg = self.cfg
        sp_ = self.space
        w, wt = self.data.initial()
        n_steps = int(round(cfg.t_end / cfg.dt))
        fb = self.feedback
        k = fb.M_sigma if fb is not None else 0
        snaps_wanted = sorted(cfg.snapshot_times)
        snaps = {}
        rows_t, rz, rwt, rw, ru, rv, ctrls, err, errw = [], [], [], [], [], [], [], [], []
        kept_w, kept_wt = ([], []) if keep_states else (None, None)
        exact = self.data.data.exact
        ref = max(np.linalg.norm(w), np.linalg.norm(wt))

        def control(step_idx, t, w, wt):
            if fb is None:
                return np.zeros(k)
            if cfg.mode == "observer":
                s = measurements(step_idx, t) if measurements is not None else fb.measure(wt)
                return fb.control_from_measurements(fb.measure(w) - s)
            return fb.control(w - wt)

        def record(step_idx, t, w, wt, u):
            z = w - wt
            rows_t.append(t)
            rz.append(sp_.norm_h(z))
            rwt.append(sp_.norm_h(wt))
            rw.append(sp_.norm_h(w))
            ru.append(float(np.linalg.norm(u)))
            rv.append(sp_.seminorm_v(wt))
            ctrls.append(u)
            if keep_states:
                kept_w.append(w.copy())
                kept_wt.append(wt.copy())
            if exact is not None:
                we = self.mesh.interpolate(lambda a, b: exact(t, a, b))
                err.append(sp_.norm_h(wt - we))
                errw.append(sp_.norm_h(w - we))

        t = 0.0
        u = control(0, t, w, wt)
        for n in range(n_steps + 1):
            t = n * cfg.dt
            if n % cfg.stride == 0 or n == n_steps:
                record(n, t, w, wt, u)
            while snaps_wanted and snaps_wanted[0] <= t + 0.5 * cfg.dt:
                ts = snaps_wanted.pop(0)
                snaps[ts] = self.snapshot(w, wt, u)
            if n == n_steps:
                break
            forcing = (self.data.load(t + cfg.dt), self.data.boundary(t + cfg.dt))
            wt_new = self.step(wt, t, forcing=forcing)
            if fb is None:
                w_new = self.step(w, t, forcing=forcing)
            elif self._woodbury is not None:
                # implicit feedback: u^{n+1} = gain (V^T M w^{n+1} - s^{n+1})
                s_next = (measurements(n + 1, t + cfg.dt) if (cfg.mode == "observer" and measurements)
                          else fb.measure(wt_new))
                I = self.system.interior
                g = forcing[1]
                bshift = fb.MV[self.system.boundary].T @ g if g is not None else 0.0
                offset = -fb.MV[I] @ (fb.gain @ (s_next - bshift))
                w_new = self.step(w, t, implicit_offset=offset, forcing=forcing)
            else:
                w_new = self.step(w, t, fb.load(u), forcing=forcing)
            w, wt = w_new, wt_new
            self._guard(w, ref, t)
            self._guard(wt, ref, t)
            u = control(n + 1, t + cfg.dt, w, wt)
        return SimRun(cfg, self.mesh, np.array(rows_t), np.array(rz), np.array(rwt), np.array(rw),
                      np.array(ru), np.array(rv), np.array(ctrls).reshape(len(rows_t), k), snaps,
                      np.array(err) if exact is not None else None,
                      np.array(errw) if exact is not None else None, w, wt, kept_w, kept_wt)

    def run_target(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """March the target alone; returns times, ``||w_t||_H`` and the H error against the exact solution.

        The error series is ``None`` when the problem has no exact solution.
        """
        cfg = self.cfg
        _, wt = self.data.initial()
        exact = self.data.data.exact
        n_steps = int(round(cfg.t_end / cfg.dt))
        ts, norms, errs = [], [], []
        ref = np.linalg.norm(wt)
        for n in range(n_steps + 1):
            t = n * cfg.dt
            if n % cfg.stride == 0 or n == n_steps:
                ts.append(t)
                norms.append(self.space.norm_h(wt))
                if exact is not None:
                    errs.append(self.space.norm_h(wt - self.mesh.interpolate(lambda a, b: exact(t, a, b))))
            if n == n_steps:
                break
            wt = self.step(wt, t)
            self._guard(wt, ref, t)
        return np.array(ts), np.array(norms), (np.array(errs) if exact is not None else None)

    def snapshot(self, w, wt, u) -> dict:
        z = w - wt
        ctrl = self.feedback.field(u) if self.feedback is not None else np.zeros_like(w)
        return {
            "w": w.copy(), "wt": wt.copy(), "z": z,
            "psi_z": self.vort.stream_function(z),
            "psi_ctrl": self.vort.stream_function(ctrl),
        }


def observer_step_inputs(wt, family: ActuatorFamily, mass) -> np.ndarray:
    """Sensor outputs ``s_j = (w_t, phi_j)_H``."""
    return family.V.T @ (mass @ wt)


def run_pair(cfg: SimConfig, mesh: Mesh | None = None) -> SimRun:
    return Simulator(cfg, mesh).run_pair()


def snapshot_csv(mesh: Mesh, values) -> str:
    buf = io.StringIO()
    buf.write("x1,x2,value\n")
    for (a, b), v in zip(mesh.nodes.tolist(), np.asarray(values).tolist()):
        buf.write(f"{a:.17g},{b:.17g},{v:.17g}\n")
    return buf.getvalue()
