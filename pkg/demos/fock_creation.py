"""Create |1> from vacuum with a displacement, a pi phase on |0>, and a second displacement.

Then climb to |2> and |3> with one such block per photon.
"""
from snapgate.experiments import climb_ladder, optimize_fock_creation
from snapgate.fock import phasor_view

res = optimize_fock_creation()
print(f"beta1 = {res.beta1:.4f}, beta2 = {res.beta2:.4f}, F = {res.fidelity:.4f}")
view = phasor_view(res.state)
print("populations:", [round(float(p), 4) for p in view.populations[:5]])

for target in (2, 3):
    ladder = climb_ladder(target, dim=30)
    stages = ", ".join(f"{f:.3f}" for f in ladder.stage_fidelities)
    print(f"|{target}>: F = {ladder.fidelity:.4f} after {len(ladder.blocks)} blocks (stage overlaps {stages})")
