"""Free evolution under the nonlinear dispersive Hamiltonian.

All frequencies are angular (rad/s). The Hamiltonian is written in a frame
rotating at the qubit frequency and at the cavity drive frequency, so that the
only linear cavity term left is the frame detuning ``delta``. In that frame
every term is diagonal in the ``|q, n>`` basis and free evolution is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, StepSizeError
from .fock import CavityState, DensityMatrix, annihilation

KHZ = 2 * np.pi * 1e3
"""Multiply a frequency quoted as f = omega / 2pi in kHz by this to get rad/s."""


@dataclass(frozen=True)
class HamiltonianParams:
    """Frame detuning and nonlinear coefficients, all in rad/s.

    ``chi2`` and ``chi3`` are the first and second corrections to the
    dispersive shift, ``kerr2`` the correction to the Kerr term.
    """

    delta: float = 0.0
    chi: float = 0.0
    chi2: float = 0.0
    chi3: float = 0.0
    kerr: float = 0.0
    kerr2: float = 0.0

    def __post_init__(self):
        for name in ("delta", "chi", "chi2", "chi3", "kerr", "kerr2"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    @classmethod
    def from_khz(cls, **values_khz) -> "HamiltonianParams":
        return cls(**{k: v * KHZ for k, v in values_khz.items()})

    def to_khz(self) -> dict:
        return {k: getattr(self, k) / KHZ for k in ("delta", "chi", "chi2", "chi3", "kerr", "kerr2")}

    def replace(self, **changes) -> "HamiltonianParams":
        return replace(self, **changes)


# Fitted values for the reference storage cavity, in kHz.
REFERENCE_PARAMS = HamiltonianParams.from_khz(
    delta=-1.1, chi=-8281.3, chi2=48.8, chi3=0.5, kerr=-107.9, kerr2=3.4
)
# Cavity frame offset applied when probing with the qubit excited, kHz.
EXCITED_FRAME_SHIFT_KHZ = -8300.0


@dataclass(frozen=True)
class DecoherenceParams:
    """Decay channels for :func:`lindblad_evolve`; zero disables a channel.

    There are no reference values for these; anything non-zero is a user
    choice.
    """

    qubit_t1: float = 0.0
    qubit_tphi: float = 0.0
    cavity_kappa: float = 0.0

    def __post_init__(self):
        for name in ("qubit_t1", "qubit_tphi", "cavity_kappa"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")


def _falling(n, k):
    n = np.asarray(n, dtype=float)
    out = np.ones_like(n)
    for j in range(k):
        out = out * (n - j)
    return out


def level_energy(n, qubit_excited: bool, params: HamiltonianParams):
    """Energy of ``|q, n>`` over hbar, in rad/s. Vectorized over ``n``."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("photon number must be non-negative")
    e = params.delta * n + params.kerr / 2 * _falling(n, 2) + params.kerr2 / 6 * _falling(n, 3)
    if qubit_excited:
        e = e + params.chi * n + params.chi2 / 2 * _falling(n, 2) + params.chi3 / 6 * _falling(n, 3)
    return e if e.ndim else float(e)


def phase_difference_rate(n, qubit_excited: bool, params: HamiltonianParams):
    """``E(n+1) - E(n)``: how fast ``arg(c_{n+1}^* c_n)`` grows during free evolution."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("photon number must be non-negative")
    r = params.delta + params.kerr * n + params.kerr2 / 2 * _falling(n, 2)
    if qubit_excited:
        r = r + params.chi + params.chi2 * n + params.chi3 / 2 * _falling(n, 2)
    return r if r.ndim else float(r)


def transition_frequency(n, params: HamiltonianParams):
    """Qubit transition frequency with ``n`` photons, relative to the bare qubit."""
    return level_energy(n, True, params) - level_energy(n, False, params)


def joint_energies(dim: int, params: HamiltonianParams) -> np.ndarray:
    """Diagonal of the joint Hamiltonian in qubit-major order, length ``2 * dim``."""
    n = np.arange(dim)
    return np.concatenate([level_energy(n, False, params), level_energy(n, True, params)])


def free_evolve(state: CavityState, params: HamiltonianParams, t: float, qubit_excited: bool = False) -> CavityState:
    """Exact evolution of a cavity state for time ``t`` with the qubit held in ``g`` or ``e``."""
    if t < 0:
        raise DomainError("evolution time must be non-negative")
    energies = level_energy(np.arange(state.dim), qubit_excited, params)
    return CavityState(state.amplitudes * np.exp(-1j * energies * t))


def _dissipator(rho, ops):
    out = np.zeros_like(rho)
    for rate, L, LdL in ops:
        out += rate * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
    return out


def _collapse_ops(dim_cav, joint, dec):
    a = annihilation(dim_cav)
    eye_c = np.eye(dim_cav)
    ops = []
    if joint:
        lower = np.array([[0, 1], [0, 0]], dtype=complex)
        excited = np.array([[0, 0], [0, 1]], dtype=complex)
        if dec.qubit_t1 > 0:
            ops.append((1.0 / dec.qubit_t1, np.kron(lower, eye_c)))
        if dec.qubit_tphi > 0:
            # |e><e| at rate 2/Tphi decays qubit coherence as exp(-t/Tphi)
            ops.append((2.0 / dec.qubit_tphi, np.kron(excited, eye_c)))
        if dec.cavity_kappa > 0:
            ops.append((dec.cavity_kappa, np.kron(np.eye(2), a)))
    elif dec.cavity_kappa > 0:
        ops.append((dec.cavity_kappa, a))
    return [(rate, L, L.conj().T @ L) for rate, L in ops]


def lindblad_evolve(
    rho: DensityMatrix,
    params: HamiltonianParams,
    dec: DecoherenceParams,
    t: float,
    dt: float,
    check_positivity: bool = True,
) -> DensityMatrix:
    """Master-equation evolution for time ``t`` with fixed RK4 steps of about ``dt``.

    Integration runs in the interaction picture of the diagonal Hamiltonian,
    so the coherent part is exact and ``dt`` only has to resolve the decay
    rates and the frequency differences between coherences that a collapse
    operator connects. A cavity-only ``rho`` evolves with the qubit in ``g``.

    Raises :class:`StepSizeError` if the trace drifts by more than 1e-6 in a
    step or an eigenvalue drops below -1e-7.
    """
    if t < 0 or dt <= 0:
        raise DomainError("need t >= 0 and dt > 0")
    if t > 0 and dt > t:
        raise DomainError("dt must not exceed t")
    dim_cav = rho.cavity_dim
    if rho.joint:
        energies = joint_energies(dim_cav, params)
    else:
        energies = level_energy(np.arange(dim_cav), False, params)
    gaps = energies[:, None] - energies[None, :]
    ops = _collapse_ops(dim_cav, rho.joint, dec)
    steps = max(1, math.ceil(t / dt - 1e-9)) if t > 0 else 0
    h = t / steps if steps else 0.0

    def rhs(rho_i, time):
        if not ops:
            return np.zeros_like(rho_i)
        phase = np.exp(-1j * gaps * time)
        return np.conj(phase) * _dissipator(phase * rho_i, ops)

    r = np.array(rho.matrix, dtype=complex)
    for k in range(steps):
        s = k * h
        k1 = rhs(r, s)
        k2 = rhs(r + 0.5 * h * k1, s + 0.5 * h)
        k3 = rhs(r + 0.5 * h * k2, s + 0.5 * h)
        k4 = rhs(r + h * k3, s + h)
        r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        r = 0.5 * (r + r.conj().T)
        tr = np.trace(r).real
        if abs(tr - 1.0) > 1e-6:
            raise StepSizeError(f"trace drifted to {tr!r} at step {k}")
        r /= tr
        if check_positivity and ops:
            lowest = np.linalg.eigvalsh(r)[0]
            if lowest < -1e-7:
                # RK4 keeps the trace exactly, so an oversized step shows up here first
                raise StepSizeError(f"eigenvalue {lowest:.3e} at step {k}; reduce dt")
    out = np.exp(-1j * gaps * t) * r
    return DensityMatrix(out, joint=rho.joint, psd_tol=1e-7)
