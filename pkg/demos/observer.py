"""Reconstructing an unknown flow from a few sensor readings.

In observer mode the feedback sees the target only through the averages
``s_j = (w_t, phi_j)_H`` over the actuator supports.  The estimate ``w``
starts from the wrong initial vorticity and converges to the hidden
target, which is why the same operator doubles as a data-assimilation
scheme.

    python3 demos/observer.py
"""
from vortctl import SimConfig, Simulator

cfg = SimConfig(preset="example1", mode="observer", M=2, lam=1.0, mesh_level=0, dt=4e-4, t_end=10.0, stride=2500)
run = Simulator(cfg).run_pair()
for t, z in zip(run.t, run.norm_z):
    print(f"t = {t:5.1f}   |w - w_t|_H = {z:.3e}")
print(f"fitted rate {run.decay.rate:.3f}")
