"""Invariant checks on small built-in meshes.

Each check returns a :class:`CheckResult` holding the worst observed
defect and the tolerance it is held to.  They back ``vortctl verify`` and
double as smoke tests for a fresh installation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .actuators import build_rectangle_family, build_triangle_family
from .control import FeedbackOperator, monotonicity_certificate
from .fem import FEMSpace
from .sim import DEFAULT_TRIANGLE, SimConfig, Simulator
from .vorticity import Vorticity


@dataclass
class CheckResult:
    name: str
    defect: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.defect) and self.defect <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} defect {self.defect:.3e}  tol {self.tol:.1e}"


def small_families(level: int = 0):
    """Rectangle and triangle families for ``M in {1, 2}`` on coarse aligned meshes."""
    fams = []
    for M in (1, 2):
        fams.append((f"rectangle M={M}", build_rectangle_family(1.0, 1.0, 0.3, M, level=level)))
        fams.append((f"triangle M={M}", build_triangle_family(DEFAULT_TRIANGLE, M, level=level)))
    return fams


def _rel(a, b) -> float:
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def projector_defects(op: FeedbackOperator, rng, n: int = 5) -> float:
    """Worst relative defect of idempotence, range, annihilation and complementarity."""
    M = op.space.M
    V, Vt = op.family.V, op.family.Vt
    worst = 0.0
    for _ in range(n):
        z = rng.standard_normal(V.shape[0])
        for P, F, G in ((op.P_act, V, Vt), (op.P_aux, Vt, V)):
            pz = P(z)
            worst = max(worst, _rel(P(pz), pz))                       # P^2 = P
            c = rng.standard_normal(F.shape[1])
            worst = max(worst, _rel(P(F @ c), F @ c))                 # identity on the range
            # (I - P) z is M-orthogonal to span G: annihilated by P
            q = P.complement(z)
            worst = max(worst, float(np.linalg.norm(P(q)) / max(np.linalg.norm(z), 1e-300)))
            worst = max(worst, float(np.abs(G.T @ (M @ q)).max() / max(np.abs(G.T @ (M @ z)).max(), 1e-300)))
            worst = max(worst, _rel(pz + q, z))                       # P + (I - P) = I
    return worst


def check_projectors(seed: int = 0, families=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, fam in families or small_families():
        op = FeedbackOperator(fam, FEMSpace(fam.mesh), 1.0)
        worst = max(worst, projector_defects(op, rng))
    return CheckResult("oblique projectors", worst, 1e-10)


def check_skew(seed: int = 0, space: FEMSpace | None = None, n: int = 20) -> CheckResult:
    """``|w . C(w)| / (|w|_H |w|_V)`` over random fields."""
    rng = np.random.default_rng(seed)
    space = space or FEMSpace(small_families()[1][1].mesh)
    vort = Vorticity(space)
    worst = 0.0
    for _ in range(n):
        w = rng.standard_normal(space.mesh.n_nodes)
        worst = max(worst, abs(w @ vort.convection(w)) / (space.norm_h(w) * space.seminorm_v(w)))
    return CheckResult("convection skew-symmetry", worst, 1e-12)


def monotonicity_defect(op: FeedbackOperator, rng, n: int = 10) -> float:
    worst = 0.0
    for _ in range(n):
        p = op.family.V @ rng.standard_normal(op.M_sigma)
        lhs, rhs = monotonicity_certificate(op, p)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return worst


def check_monotonicity(seed: int = 0, families=None, corrupt: bool = False) -> CheckResult:
    """Feedback monotonicity identity; `corrupt` perturbs the cross-Gram used by the feedback."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, fam in families or small_families():
        space = FEMSpace(fam.mesh)
        cross = None
        if corrupt:
            cross = fam.V.T @ (space.M @ fam.Vt)
            cross = cross * (1.0 + 0.05 * np.arange(1, cross.shape[0] + 1))[:, None]
        op = FeedbackOperator(fam, space, 1.0, cross_gram=cross)
        worst = max(worst, monotonicity_defect(op, rng))
    return CheckResult("feedback monotonicity" + (" [corrupted Gram]" if corrupt else ""), worst, 1e-9)


def check_energy(seed: int = 0, space: FEMSpace | None = None, n: int = 20) -> CheckResult:
    """``||velocity(w)||^2 = (w, psi_w)_H`` over random fields."""
    rng = np.random.default_rng(seed)
    space = space or FEMSpace(small_families()[1][1].mesh)
    vort = Vorticity(space)
    worst = 0.0
    for _ in range(n):
        w = rng.standard_normal(space.mesh.n_nodes)
        ke = vort.kinetic_energy(w)
        pair = float(w @ (space.M @ vort.stream_function(w)))
        worst = max(worst, abs(ke - pair) / abs(pair))
    return CheckResult("energy identity", worst, 1e-10)


def observer_defect(cfg: SimConfig, mesh=None) -> float:
    """Worst per-step H-norm gap between controlled and observer trajectories.

    The observer only receives the sensor outputs of the target recorded by
    the controlled run, so both runs see the same data.
    """
    cfg = replace(cfg, mode="controlled", stride=1)
    ctrl = Simulator(cfg, mesh)
    run_c = ctrl.run_pair(keep_states=True)
    fb = ctrl.feedback
    sensors = [fb.measure(wt) for wt in run_c.states_wt]
    obs = Simulator(replace(cfg, mode="observer"), ctrl.mesh)
    run_o = obs.run_pair(measurements=lambda n, t: sensors[n], keep_states=True)
    return float(max(ctrl.space.norm_h(a - b) for a, b in zip(run_c.states_w, run_o.states_w)))


def check_observer(t_end: float = 0.05) -> CheckResult:
    cfg = SimConfig(mode="controlled", M=1, lam=1.0, mesh_level=0, dt=4e-4, t_end=t_end)
    return CheckResult("observer equivalence", observer_defect(cfg), 1e-10)


def run_all(seed: int = 0, inject_fault: bool = False) -> list[CheckResult]:
    """All invariant checks; `inject_fault` corrupts the Gram used by the monotonicity check."""
    fams = small_families()
    space = FEMSpace(fams[1][1].mesh)
    return [
        check_projectors(seed, fams),
        check_skew(seed, space),
        check_monotonicity(seed, fams, corrupt=inject_fault),
        check_energy(seed, space),
        check_observer(),
    ]
