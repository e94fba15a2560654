import math
import warnings

import numpy as np
import pytest

from snapgate.dispersive import (
    EXCITED_FRAME_SHIFT_KHZ,
    KHZ,
    REFERENCE_PARAMS,
    DecoherenceParams,
    HamiltonianParams,
    free_evolve,
    phase_difference_rate,
)
from snapgate.errors import (
    AliasingError,
    CoverageWarning,
    DomainError,
    LowContrastError,
    OptimizationFailure,
    UnderdeterminedError,
)
from snapgate.experiments import (
    fit_hamiltonian,
    fit_sinusoid,
    interference_scan,
    kerr_correction_step,
    ladder_step,
    climb_ladder,
    measure_hamiltonian,
    optimize_fock_creation,
    phase_evolution_experiment,
    probe_phase_model,
    synthesize_phase_data,
)
from snapgate.fock import CavityState, DensityMatrix, coherent_state, fidelity
from snapgate.snap import wrap_phases

P = REFERENCE_PARAMS
FRAME = EXCITED_FRAME_SHIFT_KHZ * KHZ


def test_fit_sinusoid_monte_carlo():
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    rng = np.random.default_rng(7)
    errors = []
    for _ in range(100):
        truth = rng.uniform(-np.pi, np.pi)
        # contrast 0.8, the largest an interference scan reaches
        p = 0.5 - 0.4 * np.cos(th - truth) + rng.normal(0, 0.01, th.size)
        errors.append(wrap_phases(fit_sinusoid(th, p).phase - truth))
    assert np.max(np.abs(errors)) < 0.02


def test_fit_sinusoid_exact_and_errors():
    th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    fit = fit_sinusoid(th, 0.5 + 0.2 * np.cos(th - 1.0))
    assert wrap_phases(fit.phase - (1.0 - np.pi)) == pytest.approx(0, abs=1e-12)
    assert fit.contrast == pytest.approx(0.4)
    assert fit.p_min == pytest.approx(0.3)
    with pytest.raises(LowContrastError):
        fit_sinusoid(th, np.full(th.size, 0.4) + np.random.default_rng(0).normal(0, 0.01, th.size))
    with pytest.raises(DomainError):
        fit_sinusoid(th[:4], th[:4])
    with pytest.raises(DomainError):
        fit_sinusoid(th[:10] / 4, th[:10] / 10)


@pytest.mark.parametrize("n", [0, 2, 4])
def test_interference_minimum_and_contrast(n):
    zero = HamiltonianParams()
    curves = [interference_scan(zero, n, 0.0, epsilon=eps) for eps in (0.005, 0.01)]
    fits = [c.fit() for c in curves]
    for f in fits:
        # real coherent amplitudes: destructive interference at theta = 0
        assert abs(wrap_phases(f.phase)) < 1e-6
    assert fits[1].contrast / fits[0].contrast == pytest.approx(2.0, rel=0.01)


def _random_state(n, dim, seed, empty_below=True):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    c[12:] = 0
    if empty_below and n > 0:
        c[n - 1] = 0
    # the probed pair dominates, as in a coherent preparation near n
    c[n] *= 5
    c[n + 1] *= 5
    return CavityState.normalized(c)


@pytest.mark.parametrize("wait", [0.0, 1.3e-6, 7.1e-6])
def test_scan_phase_matches_neighbour_phase_vacuum_edge(wait):
    psi = free_evolve(coherent_state(math.sqrt(0.5), 40), P, wait).amplitudes
    expected = np.angle(np.conj(psi[1]) * psi[0])
    got = interference_scan(P, 0, wait, epsilon=0.05).fit().phase
    assert abs(wrap_phases(got - expected)) < 0.02


@pytest.mark.parametrize("n", [1, 2, 4, 6])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scan_phase_matches_neighbour_phase(n, seed):
    dim = 40
    state = _random_state(n, dim, seed)
    psi = state.amplitudes
    expected = np.angle(np.conj(psi[n + 1]) * psi[n])
    got = interference_scan(HamiltonianParams(), n, 0.0, epsilon=0.05, state=state).fit().phase
    assert abs(wrap_phases(got - expected)) < 0.02


def test_scan_phase_bias_from_lower_neighbour():
    # a populated n-1 component enters at first order in epsilon; the
    # first-order prediction for the shifted minimum matches the scan
    n, eps, dim = 3, 0.05, 40
    state = _random_state(n, dim, 5, empty_below=False)
    c = state.amplitudes
    ref = c[n] + eps * math.sqrt(n) * c[n - 1]
    predicted = np.angle(np.conj(c[n + 1]) * ref)
    got = interference_scan(HamiltonianParams(), n, 0.0, epsilon=eps, state=state).fit().phase
    assert abs(wrap_phases(got - predicted)) < 0.01


def test_scan_validation():
    with pytest.raises(DomainError):
        interference_scan(P, 1, 0.0, epsilon=0.9)
    with pytest.raises(DomainError):
        interference_scan(P, 39, 0.0)
    with pytest.raises(DomainError):
        interference_scan(P, 1, 0.0, mode="fast")


def test_zero_hamiltonian_gives_flat_traces():
    data = phase_evolution_experiment(HamiltonianParams(), np.linspace(0, 5e-6, 6), [0, 1, 2], epsilon=0.05)
    assert np.ptp(data.phases, axis=1).max() < 1e-9


def test_slope_for_single_photon_gap():
    waits = np.linspace(0, 4e-6, 21)
    data = phase_evolution_experiment(P, waits, [1], epsilon=0.02)
    slope = np.polyfit(waits, data.phases[0], 1)[0]
    # E_2 - E_1 = delta + K
    assert slope == pytest.approx(P.delta + P.kerr, rel=0.01)
    assert slope == pytest.approx(float(phase_difference_rate(1, False, P)), rel=0.01)


def test_aliasing_and_underdetermined():
    with pytest.raises(AliasingError):
        phase_evolution_experiment(P, np.linspace(0, 20e-6, 5), [0, 6])
    with pytest.raises(UnderdeterminedError):
        fit_hamiltonian(synthesize_phase_data(P, np.linspace(0, 1e-5, 10), [0, 1]))
    with pytest.raises(UnderdeterminedError):
        fit_hamiltonian(synthesize_phase_data(P, np.linspace(0, 1e-5, 10), [0, 1, 2], True, frame_shift=FRAME))


def test_synthetic_rates_recover_exactly():
    waits = np.linspace(0, 20e-6, 51)
    ns = range(7)
    ground = fit_hamiltonian(synthesize_phase_data(P, waits, ns))
    excited = fit_hamiltonian(synthesize_phase_data(P, waits, ns, True, frame_shift=FRAME), ground)
    for name in ("delta", "kerr", "kerr2"):
        assert ground.values[name] == pytest.approx(getattr(P, name), rel=1e-9)
    for name in ("chi", "chi2", "chi3"):
        assert excited.values[name] == pytest.approx(getattr(P, name), rel=1e-9)


def test_synthetic_phase_noise_uncertainties():
    waits = np.linspace(0, 20e-6, 101)
    fits = [fit_hamiltonian(synthesize_phase_data(P, waits, range(7), noise=0.02, rng=s)) for s in range(40)]
    kerr = np.array([f.values["kerr"] for f in fits])
    sigma = np.mean([f.uncertainties["kerr"] for f in fits])
    # reported 1-sigma matches the scatter within sampling error
    assert np.std(kerr) == pytest.approx(sigma, rel=0.35)
    assert abs(np.mean(kerr) - P.kerr) < 3 * sigma / math.sqrt(len(fits)) + 1e-9


def test_probe_model_reproduces_scan():
    data = phase_evolution_experiment(P, np.linspace(0, 3e-6, 4), [0, 3], epsilon=0.1)
    model = probe_phase_model(P, data)
    np.testing.assert_allclose(wrap_phases(data.phases - model), 0, atol=1e-6)


def test_measure_hamiltonian_noiseless_and_noisy():
    clean = measure_hamiltonian(noise=0.0).khz()
    truth = P.to_khz()
    for name in ("delta", "kerr", "kerr2", "chi", "chi2", "chi3"):
        assert clean[name][0] == pytest.approx(truth[name], abs=1e-4)
    noisy = measure_hamiltonian(noise=0.01, rng=3).khz()
    tol = {"kerr": 0.5, "kerr2": 0.1, "delta": 0.7, "chi": 1.0, "chi2": 0.8, "chi3": 0.2}
    for name, t in tol.items():
        assert abs(noisy[name][0] - truth[name]) < t


def test_kerr_correction_is_exact():
    psi = coherent_state(2.0, 40)
    state = psi
    for _ in range(14):
        state = kerr_correction_step(state, P)
        assert fidelity(state, psi) > 1 - 1e-10
    free = free_evolve(psi, P, 1e-6)
    assert fidelity(free, psi) < 0.9


def test_kerr_correction_warnings_and_modes():
    with pytest.warns(CoverageWarning):
        kerr_correction_step(coherent_state(2.0, 40), P, n_corrected=5)
    with pytest.raises(DomainError):
        kerr_correction_step(coherent_state(2.0, 40), P, duration=0)
    with pytest.raises(DomainError):
        kerr_correction_step(coherent_state(1.0, 20), P, mode="pulse", decoherence=DecoherenceParams(cavity_kappa=1e3))


def test_kerr_correction_with_cavity_decay():
    # without Kerr terms damping commutes with the correction
    params = HamiltonianParams(delta=P.delta)
    psi = coherent_state(1.0, 20)
    kappa = 2e4
    rho = kerr_correction_step(psi, params, decoherence=DecoherenceParams(cavity_kappa=kappa), dt=1e-8)
    assert isinstance(rho, DensityMatrix)
    # amplitude damping maps |beta> to |beta e^{-kappa t / 2}>
    target = coherent_state(math.exp(-kappa * 1e-6 / 2), 20)
    assert fidelity(rho, target) > 1 - 1e-8
    # with Kerr the decay dephases the photon-number components slightly
    kerr_rho = kerr_correction_step(psi, P, decoherence=DecoherenceParams(cavity_kappa=kappa), dt=1e-8)
    assert 0.99 < fidelity(kerr_rho, target) < 1 - 1e-4


def test_kerr_correction_pulse_mode():
    psi = coherent_state(2.0, 30)
    with pytest.warns(CoverageWarning):
        out = kerr_correction_step(psi, P, mode="pulse")
    assert fidelity(out, psi) > 0.95


def test_fock_creation_ideal():
    res = optimize_fock_creation()
    assert res.beta1 == pytest.approx(1.14, abs=0.05)
    assert res.beta2 == pytest.approx(-0.58, abs=0.05)
    assert res.fidelity >= 0.98
    assert fidelity(res.state, coherent_state(0, 40)) < 0.02
    again = optimize_fock_creation(start=(res.beta1, res.beta2), optimize=False)
    assert again.fidelity == pytest.approx(res.fidelity, abs=1e-12)
    with pytest.raises(DomainError):
        optimize_fock_creation(optimize=False)


def test_ladder():
    block = ladder_step(0)
    assert block.fidelity >= 0.98 and block.flip == 0
    two = climb_ladder(2, dim=20, restarts=4)
    assert two.fidelity > 0.9 and len(two.blocks) == 2
    assert two.to_dict()["block_count"] == 2
    with pytest.raises(OptimizationFailure):
        climb_ladder(3, dim=20, restarts=0, min_fidelity=0.9999)
    with pytest.raises(DomainError):
        climb_ladder(0)
