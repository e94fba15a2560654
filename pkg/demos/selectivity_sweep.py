"""How selective pi pulses and SNAP pulse pairs degrade as they get shorter."""
import warnings

import numpy as np

from snapgate.cli import SELECTIVITY_RATIOS, selectivity_row
from snapgate.dispersive import REFERENCE_PARAMS
from snapgate.pulses import drive_propagator, imparted_phases, pi_pulse_sigma, snap_pulse_pair

print(f"{'Omega/chi':>9s} {'sigma ns':>9s} {'transfer':>9s} {'worst off':>10s} {'phase err':>10s}")
for ratio in SELECTIVITY_RATIOS:
    sigma, _, transfer, off = selectivity_row(ratio, REFERENCE_PARAMS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pair = snap_pulse_pair(1, np.pi / 2, sigma=pi_pulse_sigma(ratio * abs(REFERENCE_PARAMS.chi)), params=REFERENCE_PARAMS)
    levels = np.arange(6)
    u, total = drive_propagator(pair, REFERENCE_PARAMS, levels)
    phases = imparted_phases(u, levels, total, REFERENCE_PARAMS)
    err = np.abs(phases - np.array([0, np.pi / 2, 0, 0, 0, 0])).max()
    print(f"{ratio:9.3f} {sigma * 1e9:9.1f} {transfer:9.5f} {off:10.2e} {err:10.4f}")
