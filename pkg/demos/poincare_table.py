"""How the constrained Poincare constant behaves as actuators are added.

``xi(M)`` is the smallest Dirichlet-energy ratio ``|w|_V^2 / |w|_H^2`` over
fields orthogonal to every actuator vorticity.  It bounds how fast the
unobserved part of the state decays on its own.  The table shows both the
growth with M on a coarse mesh and what happens as the mesh is refined: a
single centred actuator cannot see the mode that is odd about the centre,
so ``xi(1)`` tends to ``5 pi^2`` and the four small actuators at M = 2
eventually constrain less.

    python3 demos/poincare_table.py
"""
import numpy as np

from vortctl.actuators import build_rectangle_family
from vortctl.control import xi_estimate
from vortctl.fem import FEMSpace

print(f"{'level':>5} {'xi(0)':>9} {'xi(1)':>9} {'xi(2)':>9}")
for level in (0, 1, 2):
    row = []
    for M in (0, 1, 2):
        fam = build_rectangle_family(1.0, 1.0, 0.3, max(M, 1), level=level)
        space = FEMSpace(fam.mesh)
        V = fam.V if M else np.zeros((fam.mesh.n_nodes, 0))
        row.append(xi_estimate(V, space.K, space.M, fam.mesh.interior_nodes))
    print(f"{level:>5} " + " ".join(f"{x:>9.3f}" for x in row))
print(f"2 pi^2 = {2 * np.pi**2:.3f}, 5 pi^2 = {5 * np.pi**2:.3f}")
