"""Truncated Fock-space states, operators and fidelities.

Everything here works on dense numpy arrays in a Fock basis truncated at
``dim`` levels. Values are immutable once built: the arrays backing
:class:`CavityState`, :class:`Operator` and :class:`DensityMatrix` are marked
read-only, so instances can be shared freely between threads.

Joint qubit-cavity objects use qubit-major ordering, ``index = q * dim + n``
with ``q = 0`` for the ground state and ``q = 1`` for the excited state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .errors import DimensionError, DomainError, NumericalIntegrityError, TruncationError

DEFAULT_DIM = 40
TRUNCATION_GUARD = 1e-6
NORM_TOL = 1e-9
APPLY_DRIFT_TOL = 1e-6
UNDEFINED_PHASE_CUTOFF = 1e-12


def _frozen(array, dtype=complex):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _flat_json(kind, dim, values, **extra):
    values = np.asarray(values).ravel()
    payload = {"kind": kind, "dim": int(dim), "re": values.real.tolist(), "im": values.imag.tolist()}
    payload.update(extra)
    return json.dumps(payload)


def _parse_json(text, kind):
    payload = json.loads(text) if isinstance(text, str) else dict(text)
    if payload.get("kind", kind) != kind:
        raise DomainError(f"expected a serialized {kind}, got {payload.get('kind')!r}")
    values = np.asarray(payload["re"], dtype=float) + 1j * np.asarray(payload["im"], dtype=float)
    return payload, values


@dataclass(frozen=True, eq=False)
class CavityState:
    """Pure state ``sum_n c_n |n>`` over a truncated Fock basis.

    The constructor validates normalization; use :meth:`normalized` to build a
    state from unnormalized amplitudes.
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1 or amps.size < 2:
            raise DomainError("a cavity state needs a 1-d amplitude vector with dim >= 2")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL:
            raise NumericalIntegrityError(f"state norm^2 = {norm2!r} is not 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, amplitudes):
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise DomainError("cannot normalize the zero vector")
        return cls(amps / norm)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def leakage(self) -> float:
        """Population in the two highest Fock levels."""
        return float(self.populations[-2:].sum())

    def is_truncation_safe(self, guard: float = TRUNCATION_GUARD) -> bool:
        return self.leakage() < guard

    def mean_photon_number(self) -> float:
        return float(np.dot(np.arange(self.dim), self.populations))

    def to_json(self) -> str:
        return _flat_json("ket", self.dim, self.amplitudes)

    @classmethod
    def from_json(cls, text):
        payload, values = _parse_json(text, "ket")
        if values.size != payload["dim"]:
            raise DomainError("amplitude count does not match dim")
        return cls(values)


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense ``dim x dim`` matrix, optionally flagged as intended to be unitary."""

    matrix: np.ndarray
    unitary: bool = False

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DomainError("operators must be square matrices")
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def unitarity_error(self, block: int | None = None) -> float:
        """``max |U^dag U - I|`` restricted to the lowest ``block`` levels."""
        k = self.dim if block is None else int(block)
        sub = self.matrix[:, :k]
        gram = sub.conj().T @ sub
        return float(np.max(np.abs(gram - np.eye(k))))

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.unitary)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            if other.dim != self.dim:
                raise DimensionError(f"cannot compose {self.dim}x{self.dim} with {other.dim}x{other.dim}")
            return Operator(self.matrix @ other.matrix, self.unitary and other.unitary)
        if isinstance(other, (CavityState, DensityMatrix)):
            return apply(self, other)
        return NotImplemented

    def to_json(self) -> str:
        return _flat_json("operator", self.dim, self.matrix, unitary=bool(self.unitary))

    @classmethod
    def from_json(cls, text):
        payload, values = _parse_json(text, "operator")
        dim = payload["dim"]
        return cls(values.reshape(dim, dim), bool(payload.get("unitary", False)))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Trace-one positive semidefinite matrix.

    ``joint`` marks a qubit-cavity matrix of size ``2 * cavity_dim`` in
    qubit-major order.
    """

    matrix: np.ndarray
    joint: bool = False
    psd_tol: float = field(default=NORM_TOL, repr=False)

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DomainError("density matrices must be square")
        if self.joint and mat.shape[0] % 2:
            raise DomainError("a joint density matrix needs an even dimension")
        if np.max(np.abs(mat - mat.conj().T)) > NORM_TOL:
            raise NumericalIntegrityError("density matrix is not Hermitian")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > NORM_TOL:
            raise NumericalIntegrityError(f"density matrix trace {tr!r} is not 1")
        lowest = np.linalg.eigvalsh(mat)[0]
        if lowest < -self.psd_tol:
            raise NumericalIntegrityError(f"density matrix has eigenvalue {lowest:.3e}")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_state(cls, state) -> "DensityMatrix":
        amps = np.asarray(getattr(state, "amplitudes", state), dtype=complex)
        joint = getattr(state, "is_joint", False)
        return cls(np.outer(amps, amps.conj()), joint=joint)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def cavity_dim(self) -> int:
        return self.dim // 2 if self.joint else self.dim

    @property
    def populations(self) -> np.ndarray:
        """Photon-number distribution (traced over the qubit for joint matrices)."""
        diag = np.diag(self.matrix).real
        if self.joint:
            diag = diag.reshape(2, -1).sum(axis=0)
        return diag

    def cavity(self) -> "DensityMatrix":
        """Reduced cavity state."""
        if not self.joint:
            return self
        n = self.cavity_dim
        blocks = self.matrix.reshape(2, n, 2, n)
        return DensityMatrix(blocks[0, :, 0, :] + blocks[1, :, 1, :], psd_tol=self.psd_tol)

    def excited_population(self) -> float:
        if not self.joint:
            raise DomainError("cavity-only density matrix has no qubit")
        n = self.cavity_dim
        return float(np.trace(self.matrix[n:, n:]).real)

    def to_json(self) -> str:
        extra = {"layout": "qubit-major"} if self.joint else {}
        return _flat_json("density", self.dim, self.matrix, **extra)

    @classmethod
    def from_json(cls, text):
        payload, values = _parse_json(text, "density")
        dim = payload["dim"]
        return cls(values.reshape(dim, dim), joint=payload.get("layout") == "qubit-major")


@dataclass(frozen=True, eq=False)
class PhasorView:
    """Per-component magnitude ``sqrt(p(n))`` and phase ``arg c_n``.

    ``defined[n]`` is False where ``p(n)`` is too small for the phase to mean
    anything; those phases are reported as 0.
    """

    magnitudes: np.ndarray
    phases: np.ndarray
    defined: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return self.magnitudes**2


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def creation(dim: int) -> np.ndarray:
    return annihilation(dim).T.copy()


def number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def identity(dim: int) -> Operator:
    return Operator(np.eye(dim, dtype=complex), unitary=True)


def fock_state(n: int, dim: int = DEFAULT_DIM) -> CavityState:
    if dim < 2:
        raise DomainError("dim must be at least 2")
    if not 0 <= n < dim:
        raise DomainError(f"photon number {n} outside [0, {dim})")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return CavityState(amps)


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Untruncated coherent-state amplitudes ``exp(-|a|^2/2) a^n / sqrt(n!)`` for n < dim."""
    n = np.arange(dim)
    r = abs(alpha)
    if r == 0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
        return amps
    log_mag = -0.5 * r * r + n * np.log(r) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(alpha: complex, dim: int = DEFAULT_DIM) -> CavityState:
    """Coherent state ``|alpha>``, renormalized after truncation.

    Raises :class:`TruncationError` when ``|alpha|^2 > dim / 4``.
    """
    if abs(alpha) ** 2 > dim / 4:
        raise TruncationError(f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds dim/4 = {dim / 4:.3g}")
    return CavityState.normalized(coherent_amplitudes(alpha, dim))


def displacement_operator(alpha: complex, dim: int = DEFAULT_DIM) -> Operator:
    """``D(alpha) = exp(alpha a^dag - alpha^* a)`` by dense matrix exponential."""
    a = annihilation(dim)
    return Operator(expm(alpha * a.conj().T - np.conj(alpha) * a), unitary=True)


def apply(op: Operator, state):
    """Apply ``op`` to a pure state or density matrix.

    Pure states are renormalized if their norm drifted by less than 1e-6;
    larger drift raises :class:`NumericalIntegrityError`.
    """
    if isinstance(state, DensityMatrix):
        if op.dim != state.dim:
            raise DimensionError(f"operator dim {op.dim} != state dim {state.dim}")
        out = op.matrix @ state.matrix @ op.matrix.conj().T
        tr = np.trace(out).real
        if abs(tr - 1.0) > APPLY_DRIFT_TOL:
            raise NumericalIntegrityError(f"trace drifted to {tr!r}")
        out = 0.5 * (out + out.conj().T) / tr
        return DensityMatrix(out, joint=state.joint, psd_tol=state.psd_tol)
    if op.dim != state.dim:
        raise DimensionError(f"operator dim {op.dim} != state dim {state.dim}")
    out = op.matrix @ state.amplitudes
    norm2 = float(np.vdot(out, out).real)
    if abs(norm2 - 1.0) > APPLY_DRIFT_TOL:
        raise NumericalIntegrityError(f"norm^2 drifted to {norm2!r}")
    return type(state)(out / np.sqrt(norm2))


def _as_matrix_or_vector(x):
    if isinstance(x, DensityMatrix):
        return x.matrix
    if hasattr(x, "amplitudes"):
        return x.amplitudes
    return np.asarray(x, dtype=complex)


def _is_joint(x):
    return bool(getattr(x, "joint", False) or getattr(x, "is_joint", False))


def _reduced(x):
    if isinstance(x, DensityMatrix):
        return x.cavity().matrix
    return _as_matrix_or_vector(x.cavity_density())


def _comparable(a, b):
    """Arrays for a pair of states; a joint state facing a cavity state is reduced to the cavity."""
    if _is_joint(a) and not _is_joint(b):
        return _reduced(a), _as_matrix_or_vector(b)
    if _is_joint(b) and not _is_joint(a):
        return _as_matrix_or_vector(a), _reduced(b)
    return _as_matrix_or_vector(a), _as_matrix_or_vector(b)


def _sqrt_psd(mat):
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(a, b) -> float:
    """Fidelity between pure states and/or density matrices, clipped to [0, 1].

    ``|<a|b>|^2`` for two pure states, ``<psi|rho|psi>`` for a pure/mixed pair
    and ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`` for two mixed states.
    A joint qubit-cavity state compared with a cavity state is first reduced
    to the cavity.
    """
    x, y = _comparable(a, b)
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"dimension mismatch {x.shape[0]} vs {y.shape[0]}")
    if x.ndim == 1 and y.ndim == 1:
        f = abs(np.vdot(x, y)) ** 2
    elif x.ndim == 1:
        f = np.vdot(x, y @ x).real
    elif y.ndim == 1:
        f = np.vdot(y, x @ y).real
    else:
        sx = _sqrt_psd(x)
        inner = np.linalg.eigvalsh(0.5 * (sx @ y @ sx + (sx @ y @ sx).conj().T))
        f = np.sum(np.sqrt(np.clip(inner, 0, None))) ** 2
    return float(np.clip(f, 0.0, 1.0))


def trace_distance(a, b) -> float:
    """``0.5 * ||rho - sigma||_1``; pure states are promoted to projectors."""
    x, y = _comparable(a, b)
    if x.ndim == 1:
        x = np.outer(x, x.conj())
    if y.ndim == 1:
        y = np.outer(y, y.conj())
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch {x.shape} vs {y.shape}")
    diff = x - y
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def fix_gauge(amplitudes) -> np.ndarray:
    """Remove the global phase so the lowest occupied component is real and positive."""
    amps = np.asarray(amplitudes, dtype=complex)
    occupied = np.flatnonzero(np.abs(amps) ** 2 > UNDEFINED_PHASE_CUTOFF)
    if occupied.size == 0:
        return amps.copy()
    return amps * np.exp(-1j * np.angle(amps[occupied[0]]))


def phasor_view(state: CavityState, gauge: bool = True) -> PhasorView:
    amps = fix_gauge(state.amplitudes) if gauge else state.amplitudes
    pops = np.abs(amps) ** 2
    defined = pops >= UNDEFINED_PHASE_CUTOFF
    phases = np.where(defined, np.angle(amps), 0.0)
    return PhasorView(_frozen(np.sqrt(pops), float), _frozen(phases, float), _frozen(defined, bool))
