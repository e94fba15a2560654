"""Rotate the cat-code qubit of |beta = 2> with a SNAP on the odd components."""
import numpy as np

from snapgate.analysis import default_axis, wigner
from snapgate.fock import coherent_state
from snapgate.snap import parity_phases, snap

dim, beta = 40, 2.0
plus, minus = coherent_state(beta, dim).amplitudes, coherent_state(-beta, dim).amplitudes
axis = default_axis(4.0, 0.1)
for phi in (0.0, np.pi / 4, np.pi / 2, np.pi):
    out = snap(parity_phases(phi, dim), dim) @ coherent_state(beta, dim)
    weight_minus = abs(np.vdot(minus, out.amplitudes)) ** 2
    grid = wigner(out, axis, axis)
    print(f"phi = {phi:.3f}: overlap with |-beta> = {weight_minus:.4f}, "
          f"W at +beta {grid.at(beta):+.3f}, at -beta {grid.at(-beta):+.3f}, at 0 {grid.at(0):+.3f}")
