"""Pulse-level simulation of selective qubit drives on the joint qubit-cavity system.

The drive acts on the qubit only and conserves photon number, so the joint
propagator is block diagonal: one 2x2 qubit propagator per Fock level ``n``.
Integration happens in the interaction picture of the diagonal dispersive
Hamiltonian. Each fixed step applies the exact exponential of the
step-averaged drive Hamiltonian: the envelope is sampled at the step midpoint
and the tone's oscillating phase is integrated exactly over the step. Every
step is an exact 2x2 unitary, so norm is preserved unconditionally.

Conventions: qubit basis ``(g, e)``; a tone on peak ``n`` with axis ``phi``
contributes ``(Omega(t) / 2) (sigma+ exp(-i(w_n t + phi)) + h.c.)`` where
``w_n`` is the qubit transition frequency with ``n`` photons.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .dispersive import HamiltonianParams, level_energy, transition_frequency
from .errors import DomainError, NumericalIntegrityError, SelectivityWarning, StepSizeError
from .fock import CavityState, DensityMatrix, NORM_TOL
from .snap import pad_phases, wrap_phases

TRUNCATION_SIGMAS = 2.0
MAX_PHASE_PER_STEP = 0.05
SELECTIVITY_LIMIT = 0.1
ACTIVE_POPULATION = 1e-16
# qubit population allowed to remain in e after a complete pulse pair
DISENTANGLE_BOUND = 1e-3
_CHUNK = 2048


@dataclass(frozen=True)
class Tone:
    """One sideband of a multiplexed pulse: peak ``n``, rotation axis, relative amplitude."""

    n: int
    axis: float = 0.0
    weight: float = 1.0


@dataclass(frozen=True)
class PulseEnvelope:
    """Truncated Gaussian carrying one or more selective tones.

    ``omega`` is the peak Rabi rate (rad/s) of a unit-weight tone. The pulse
    lasts ``duration`` (default ``4 sigma``) and is centred in that window.
    """

    omega: float
    sigma: float
    tones: tuple
    duration: float | None = None

    def __post_init__(self):
        if self.omega < 0 or self.sigma <= 0:
            raise DomainError("need omega >= 0 and sigma > 0")
        object.__setattr__(self, "tones", tuple(self.tones))
        if self.duration is None:
            object.__setattr__(self, "duration", 2 * TRUNCATION_SIGMAS * self.sigma)

    @property
    def spectral_width(self) -> float:
        """``1 / (2 pi sigma)`` in Hz."""
        return 1.0 / (2 * np.pi * self.sigma)

    def selectivity_ratio(self, params: HamiltonianParams) -> float:
        return self.omega / abs(params.chi) if params.chi else math.inf

    def envelope(self, t):
        """Rabi rate of a unit-weight tone at time ``t`` after the pulse starts."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, self.omega * np.exp(-((t - self.duration / 2) ** 2) / (2 * self.sigma**2)), 0.0)

    def area(self) -> float:
        """``integral Omega dt`` of a unit-weight tone."""
        return self.omega * _gaussian_integral(self.sigma, self.duration)

    def to_dict(self) -> dict:
        return {
            "sigma_ns": self.sigma * 1e9,
            "omega_mhz": self.omega / (2 * np.pi * 1e6),
            "duration_ns": self.duration * 1e9,
            "tones": [
                {"n": int(t.n), "axis_deg": float(np.degrees(t.axis)), "weight": float(t.weight)} for t in self.tones
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "PulseEnvelope":
        tones = tuple(Tone(int(t["n"]), float(np.radians(t["axis_deg"])), float(t.get("weight", 1.0))) for t in d["tones"])
        return cls(
            omega=d["omega_mhz"] * 2 * np.pi * 1e6,
            sigma=d["sigma_ns"] * 1e-9,
            tones=tones,
            duration=d["duration_ns"] * 1e-9 if "duration_ns" in d else None,
        )


def pulses_to_json(pulses) -> str:
    return json.dumps([p.to_dict() for p in pulses], indent=2)


def pulses_from_json(text) -> list:
    return [PulseEnvelope.from_dict(d) for d in json.loads(text)]


def _gaussian_integral(sigma, duration):
    return sigma * math.sqrt(2 * math.pi) * erf(duration / (2 * math.sqrt(2) * sigma))


def pi_pulse_omega(sigma: float, duration: float | None = None) -> float:
    """Peak Rabi rate giving area pi for a truncated Gaussian of width ``sigma``."""
    duration = 2 * TRUNCATION_SIGMAS * sigma if duration is None else duration
    return math.pi / _gaussian_integral(sigma, duration)


def pi_pulse_sigma(omega: float) -> float:
    """Width of a ``4 sigma`` truncated Gaussian pi pulse with peak Rabi rate ``omega``."""
    if omega <= 0:
        raise DomainError("omega must be positive")
    return math.pi / (omega * math.sqrt(2 * math.pi) * erf(TRUNCATION_SIGMAS / math.sqrt(2)))


@dataclass(frozen=True)
class PulseSettings:
    """How selective pulses are sized: by ``omega_ratio = Omega / |chi|`` or by ``sigma``.

    ``sigma`` wins when both are given. ``dt`` of None picks a step from the
    fastest tone detuning.
    """

    omega_ratio: float | None = 0.02
    sigma: float | None = None
    dt: float | None = None

    def resolve_sigma(self, params: HamiltonianParams) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        if not self.omega_ratio or not params.chi:
            raise DomainError("need sigma, or omega_ratio together with a non-zero chi")
        return pi_pulse_sigma(self.omega_ratio * abs(params.chi))


# 125 ns Gaussians: two of them fill a 1 us correction window.
KERR_TIMING = PulseSettings(omega_ratio=None, sigma=125e-9)


@dataclass(frozen=True, eq=False)
class JointState:
    """Pure qubit-cavity state, amplitudes in qubit-major order (length ``2 * dim``)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.size < 4 or amps.size % 2:
            raise DomainError("joint amplitudes must have even length >= 4")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL:
            raise NumericalIntegrityError(f"joint state norm^2 = {norm2!r} is not 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    is_joint = True

    @classmethod
    def from_cavity(cls, state: CavityState, qubit_excited: bool = False) -> "JointState":
        amps = np.zeros(2 * state.dim, dtype=complex)
        offset = state.dim if qubit_excited else 0
        amps[offset : offset + state.dim] = state.amplitudes
        return cls(amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size // 2

    def branches(self) -> np.ndarray:
        """Amplitudes as a ``(2, dim)`` array indexed ``[q, n]``."""
        return self.amplitudes.reshape(2, self.dim)

    @property
    def excited_population(self) -> float:
        return float(np.sum(np.abs(self.branches()[1]) ** 2))

    def is_disentangled(self, bound: float = DISENTANGLE_BOUND, qubit_excited: bool = False) -> bool:
        """Whether the qubit is back in its starting state up to ``bound``."""
        left = self.ground_population if qubit_excited else self.excited_population
        return left < bound

    @property
    def ground_population(self) -> float:
        return float(np.sum(np.abs(self.branches()[0]) ** 2))

    @property
    def cavity_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.branches()) ** 2, axis=0)

    def cavity_density(self) -> DensityMatrix:
        """Reduced cavity state, tracing out the qubit."""
        b = self.branches()
        return DensityMatrix(np.outer(b[0], b[0].conj()) + np.outer(b[1], b[1].conj()))

    def cavity_branch(self, qubit_excited: bool = False) -> CavityState:
        """Normalized cavity state conditioned on the qubit being in ``g`` (or ``e``)."""
        return CavityState.normalized(self.branches()[int(qubit_excited)])

    def to_json(self) -> str:
        payload = {
            "kind": "joint",
            "dim": self.dim,
            "layout": "qubit-major",
            "re": self.amplitudes.real.tolist(),
            "im": self.amplitudes.imag.tolist(),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text) -> "JointState":
        d = json.loads(text)
        return cls(np.asarray(d["re"]) + 1j * np.asarray(d["im"]))


def as_joint(state) -> JointState:
    if isinstance(state, JointState):
        return state
    if isinstance(state, CavityState):
        return JointState.from_cavity(state)
    raise DomainError(f"cannot interpret {type(state).__name__} as a joint state")


def _step_unitaries(b, h):
    """Exact ``exp(-i h [[0, b*], [b, 0]])`` for an array of couplings ``b``."""
    r = np.abs(b)
    c = np.cos(r * h)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(r > 0, np.sin(r * h) / np.where(r > 0, r, 1.0), h)
    u = np.empty(b.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c
    u[..., 1, 1] = c
    u[..., 0, 1] = -1j * s * np.conj(b)
    u[..., 1, 0] = -1j * s * b
    return u


def _ordered_product(u):
    """``u[-1] @ ... @ u[0]`` along the first axis by pairwise reduction."""
    while u.shape[0] > 1:
        if u.shape[0] % 2:
            eye = np.broadcast_to(np.eye(2, dtype=complex), (1,) + u.shape[1:])
            u = np.concatenate([u, eye], axis=0)
        u = np.matmul(u[1::2], u[0::2])
    return u[0]


def _pulse_blocks(pulse, t0, w_blocks, params, dt):
    """Interaction-picture propagator of one pulse for each block."""
    nb = w_blocks.size
    tones = [t for t in pulse.tones if t.weight != 0]
    if pulse.omega == 0 or not tones:
        return np.broadcast_to(np.eye(2, dtype=complex), (nb, 2, 2)).copy()
    w_tones = np.array([transition_frequency(t.n, params) for t in tones], dtype=float)
    axes = np.array([t.axis for t in tones])
    weights = np.array([t.weight for t in tones])
    detune = w_blocks[:, None] - w_tones[None, :]
    fastest = float(np.max(np.abs(detune)))
    if dt is None:
        dt = pulse.sigma / 40
        if fastest > 0:
            dt = min(dt, 0.8 * MAX_PHASE_PER_STEP / fastest)
    elif dt * fastest >= MAX_PHASE_PER_STEP:
        raise StepSizeError(f"dt = {dt:.3e} s does not resolve a {fastest:.3e} rad/s tone detuning")
    steps = max(1, math.ceil(pulse.duration / dt))
    h = pulse.duration / steps
    # exact step average of exp(i detune t) relative to its midpoint value
    avg = np.sinc(detune * h / (2 * np.pi)) * (weights / 2)[None, :]
    total = np.broadcast_to(np.eye(2, dtype=complex), (nb, 2, 2)).copy()
    for start in range(0, steps, _CHUNK):
        m = np.arange(start, min(steps, start + _CHUNK))
        t_mid = (m + 0.5) * h
        env = pulse.envelope(t_mid)
        phase = np.exp(1j * (detune[None, :, :] * (t0 + t_mid)[:, None, None] - axes[None, None, :]))
        b = env[:, None] * np.sum(avg[None, :, :] * phase, axis=2)
        total = np.matmul(_ordered_product(_step_unitaries(b, h)), total)
    return total


def drive_propagator(pulses, params: HamiltonianParams, blocks, dt: float | None = None):
    """Lab-frame 2x2 propagators of a pulse sequence for the Fock levels in ``blocks``.

    Pulses play back to back. Returns ``(U, total_time)`` with ``U`` of shape
    ``(len(blocks), 2, 2)``; ``U[i]`` acts on ``(|g, n_i>, |e, n_i>)``.
    """
    blocks = np.asarray(blocks, dtype=int)
    w_blocks = np.asarray(transition_frequency(blocks, params), dtype=float).reshape(-1)
    u = np.broadcast_to(np.eye(2, dtype=complex), (blocks.size, 2, 2)).copy()
    t0 = 0.0
    for pulse in pulses:
        u = np.matmul(_pulse_blocks(pulse, t0, w_blocks, params, dt), u)
        t0 += pulse.duration
    free = np.stack(
        [np.exp(-1j * level_energy(blocks, False, params) * t0), np.exp(-1j * level_energy(blocks, True, params) * t0)],
        axis=-1,
    ).reshape(blocks.size, 2)
    return free[:, :, None] * u, t0


def apply_blocks(u, state: JointState, blocks=None, total_time: float = 0.0, params=None) -> JointState:
    """Apply block propagators ``u`` (for Fock levels ``blocks``) to a joint state.

    Levels not listed in ``blocks`` only evolve freely for ``total_time``.
    """
    psi = state.branches().copy()
    blocks = np.arange(state.dim) if blocks is None else np.asarray(blocks, dtype=int)
    rest = np.setdiff1d(np.arange(state.dim), blocks)
    if rest.size and total_time:
        psi[0, rest] *= np.exp(-1j * level_energy(rest, False, params) * total_time)
        psi[1, rest] *= np.exp(-1j * level_energy(rest, True, params) * total_time)
    psi[:, blocks] = np.einsum("bij,jb->ib", u, psi[:, blocks])
    flat = psi.reshape(-1)
    norm2 = float(np.vdot(flat, flat).real)
    if abs(norm2 - 1.0) > 1e-7:
        raise StepSizeError(f"norm^2 drifted to {norm2!r}")
    return JointState(flat / math.sqrt(norm2))


def simulate_drive(start, pulses, params: HamiltonianParams, dt: float | None = None) -> JointState:
    """Evolve a joint (or cavity, qubit in ``g``) state through a back-to-back pulse sequence.

    Fock levels with essentially no population (below 1e-16) skip the drive
    and only evolve freely.
    """
    state = as_joint(start)
    pops = np.sum(np.abs(state.branches()) ** 2, axis=0)
    active = np.flatnonzero(pops > ACTIVE_POPULATION)
    u, total = drive_propagator(pulses, params, active, dt=dt)
    return apply_blocks(u, state, active, total, params)


def selective_pi_pulse(n, sigma: float, axis: float = 0.0) -> PulseEnvelope:
    """Area-pi Gaussian on one peak (or several, for a sequence of ``n``)."""
    peaks = np.atleast_1d(n)
    return PulseEnvelope(pi_pulse_omega(sigma), sigma, tuple(Tone(int(k), axis) for k in peaks))


def pair_phase(axis1: float, axis2: float, qubit_excited: bool = False) -> float:
    """Phase left on the starting qubit state by pi pulses about ``axis1`` then ``axis2``.

    From ``R(axis2, pi) R(axis1, pi) = -diag(exp(i d), exp(-i d))`` with
    ``d = axis2 - axis1`` in the ``(g, e)`` basis.
    """
    d = axis2 - axis1
    return float(wrap_phases(np.pi - d if qubit_excited else np.pi + d))


def pair_axis_difference(theta, qubit_excited: bool = False):
    """Axis offset ``axis2 - axis1`` that makes a pi-pulse pair impart ``theta``."""
    theta = np.asarray(theta, dtype=float)
    return wrap_phases(np.pi - theta if qubit_excited else theta - np.pi)


def rotation(axis: float, angle: float) -> np.ndarray:
    """2x2 qubit rotation generated by a resonant tone with the given axis and area."""
    gen = np.array([[0, np.exp(1j * axis)], [np.exp(-1j * axis), 0]]) / 2
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(-1j * angle * w)) @ v.conj().T


def _check_selectivity(sigma, params):
    ratio = pi_pulse_omega(sigma) / abs(params.chi) if params is not None and params.chi else 0.0
    if ratio > SELECTIVITY_LIMIT:
        warnings.warn(
            f"Omega/|chi| = {ratio:.3f} exceeds {SELECTIVITY_LIMIT}; pulses are only weakly selective",
            SelectivityWarning,
            stacklevel=3,
        )
    return ratio


def snap_pulse_pair(
    n: int,
    theta: float,
    omega: float | None = None,
    sigma: float | None = None,
    params: HamiltonianParams | None = None,
    qubit_excited: bool = False,
) -> list:
    """Two selective pi pulses on peak ``n`` imparting geometric phase ``theta``.

    Give exactly one of ``omega`` (peak Rabi rate) or ``sigma``; the other
    follows from the area-pi condition. With ``params``, a
    :class:`SelectivityWarning` is emitted when ``Omega / |chi| > 0.1``.
    """
    if (omega is None) == (sigma is None):
        raise DomainError("give exactly one of omega or sigma")
    sigma = pi_pulse_sigma(omega) if sigma is None else sigma
    _check_selectivity(sigma, params)
    d = float(pair_axis_difference(theta, qubit_excited))
    return [selective_pi_pulse(n, sigma, 0.0), selective_pi_pulse(n, sigma, d)]


def snap_pulses(theta, sigma: float, params: HamiltonianParams | None = None, qubit_excited: bool = False) -> list:
    """Multiplexed pulse pair driving every peak ``0 .. len(theta) - 1``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _check_selectivity(sigma, params)
    omega = pi_pulse_omega(sigma)
    diff = pair_axis_difference(theta, qubit_excited)
    first = PulseEnvelope(omega, sigma, tuple(Tone(k, 0.0) for k in range(theta.size)))
    second = PulseEnvelope(omega, sigma, tuple(Tone(k, float(diff[k])) for k in range(theta.size)))
    return [first, second]


def imparted_phases(u, blocks, total_time, params: HamiltonianParams, qubit_excited: bool = False) -> np.ndarray:
    """Phase each block's qubit-diagonal element picks up beyond free evolution."""
    q = int(qubit_excited)
    free = level_energy(np.asarray(blocks), qubit_excited, params) * total_time
    return wrap_phases(np.angle(u[:, q, q]) + free)


@dataclass(frozen=True, eq=False)
class CompiledSnap:
    """A pulse-level SNAP: its pulses and the block propagators they produce."""

    pulses: list
    blocks: np.ndarray
    propagators: np.ndarray
    duration: float
    requested: np.ndarray
    achieved: np.ndarray = field(repr=False)

    def apply(self, state, params: HamiltonianParams, check: bool = True) -> JointState:
        """Propagate ``state``; with ``check``, warn if the qubit is left entangled."""
        start = as_joint(state)
        out = apply_blocks(self.propagators, start, self.blocks, self.duration, params)
        excited = start.excited_population > 0.5
        if check and not out.is_disentangled(qubit_excited=excited):
            warnings.warn(
                f"qubit left {out.ground_population if excited else out.excited_population:.2e} away from its start state",
                SelectivityWarning,
                stacklevel=2,
            )
        return out


def compile_snap(
    theta,
    params: HamiltonianParams,
    dim: int,
    settings: PulseSettings = KERR_TIMING,
    calibrate: bool = True,
    iterations: int = 4,
    qubit_excited: bool = False,
) -> CompiledSnap:
    """Build a multiplexed pulse pair for ``theta`` and its propagators on all ``dim`` levels.

    With ``calibrate``, the axes are re-solved a few times so that levels with
    a tone receive ``theta`` despite AC Stark shifts from the other tones.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sigma = settings.resolve_sigma(params)
    blocks = np.arange(dim)
    toned = np.arange(theta.size)
    command = theta.copy()
    for attempt in range(iterations if calibrate else 1):
        with warnings.catch_warnings():
            if attempt:
                warnings.simplefilter("ignore", SelectivityWarning)
            pulses = snap_pulses(command, sigma, params, qubit_excited)
        u, total = drive_propagator(pulses, params, blocks, dt=settings.dt)
        got = imparted_phases(u, blocks, total, params, qubit_excited)
        command = command + wrap_phases(theta - got[toned])
    achieved = imparted_phases(u, blocks, total, params, qubit_excited)
    return CompiledSnap(pulses, blocks, u, total, pad_phases(theta, dim), achieved)


def measure_number(state, n: int, params: HamiltonianParams, settings: PulseSettings = PulseSettings(), mode: str = "pulse") -> float:
    """Probability of ``n`` photons.

    Pulse mode applies a selective pi pulse on peak ``n`` to a state whose
    qubit starts in ``g`` and returns the final excited population; ideal
    mode returns ``p(n)`` directly.
    """
    if mode == "ideal":
        pops = state.cavity_populations if isinstance(state, JointState) else state.populations
        return float(pops[n])
    _require_mode(mode)
    pulse = selective_pi_pulse(n, settings.resolve_sigma(params))
    return simulate_drive(state, [pulse], params, dt=settings.dt).excited_population


def measure_parity(
    state,
    params: HamiltonianParams,
    settings: PulseSettings = PulseSettings(),
    mode: str = "pulse",
    peaks: str = "odd",
    n_max: int | None = None,
) -> float:
    """Photon-number parity expectation ``sum (-1)^n p(n)``.

    Pulse mode drives all odd (or even) peaks below ``n_max`` at once and
    converts the excited population: ``1 - 2 p(e)`` for odd peaks,
    ``2 p(e) - 1`` for even ones. ``n_max`` defaults to just past the
    highest level holding more than 1e-12 population.
    """
    pops = state.cavity_populations if isinstance(state, JointState) else state.populations
    if mode == "ideal":
        return float(np.sum((-1.0) ** np.arange(pops.size) * pops))
    _require_mode(mode)
    if peaks not in ("odd", "even"):
        raise DomainError("peaks must be 'odd' or 'even'")
    if n_max is None:
        n_max = int(np.flatnonzero(pops > 1e-12).max()) + 1
    first = 1 if peaks == "odd" else 0
    targets = list(range(first, min(n_max, pops.size), 2))
    if not targets:
        pe = 0.0
    else:
        pulse = selective_pi_pulse(targets, settings.resolve_sigma(params))
        pe = simulate_drive(state, [pulse], params, dt=settings.dt).excited_population
    return 1 - 2 * pe if peaks == "odd" else 2 * pe - 1


def _require_mode(mode):
    if mode != "pulse":
        raise DomainError(f"mode must be 'ideal' or 'pulse', got {mode!r}")
