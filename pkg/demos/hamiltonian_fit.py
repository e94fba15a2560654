"""Measure the cavity Hamiltonian from simulated phase-evolution data.

A coherent state is prepared, left to evolve, and the relative phase of
each neighbouring pair of Fock components is read out by interference with
a small probe displacement. The phase advances linearly with the wait, and
the slopes across photon numbers give the detuning, Kerr and dispersive
terms.
"""
import numpy as np

from snapgate.dispersive import REFERENCE_PARAMS
from snapgate.experiments import measure_hamiltonian

meas = measure_hamiltonian(noise=0.01, rng=0)

print("phase slopes, qubit in g (kHz):", np.round(meas.ground.slopes / (2 * np.pi * 1e3), 3))
print()
print(f"{'term':8s} {'fit':>12s} {'sigma':>8s} {'true':>10s}")
truth = REFERENCE_PARAMS.to_khz()
for name, (value, sigma) in meas.khz().items():
    if name in truth:
        print(f"{name:8s} {value:12.3f} {sigma:8.3f} {truth[name]:10.3f}")
