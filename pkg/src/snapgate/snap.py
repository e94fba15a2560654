"""Ideal SNAP gates and the named phase patterns.

A phase vector ``theta`` assigns ``theta[n]`` to Fock component ``n``; any
component past the end of the vector gets phase 0. Phase vectors are plain
float arrays; :func:`wrap_phases` gives their canonical form in (-pi, pi].
"""
from __future__ import annotations

import json

import numpy as np

from .dispersive import HamiltonianParams, level_energy
from .errors import DomainError
from .fock import Operator


def wrap_phases(theta) -> np.ndarray:
    """Map phases into (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


def pad_phases(theta, dim: int) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size > dim:
        raise DomainError(f"{theta.size} phases do not fit in dim {dim}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("phases must be finite")
    out = np.zeros(dim)
    out[: theta.size] = theta
    return out


def snap(theta, dim: int) -> Operator:
    """Diagonal unitary ``sum_n exp(i theta_n) |n><n|``."""
    return Operator(np.diag(np.exp(1j * pad_phases(theta, dim))), unitary=True)


def single_snap(n: int, theta: float, dim: int) -> Operator:
    """Phase ``theta`` on component ``n`` only."""
    if not 0 <= n < dim:
        raise DomainError(f"component {n} outside [0, {dim})")
    phases = np.zeros(dim)
    phases[n] = theta
    return snap(phases, dim)


def rotation_phases(phi: float, dim: int) -> np.ndarray:
    """``theta_n = n phi``: rotates phase space by ``phi``."""
    return np.arange(dim) * float(phi)


def parity_phases(phi: float, dim: int) -> np.ndarray:
    """Phase ``phi`` on odd components, 0 on even ones."""
    return np.where(np.arange(dim) % 2 == 1, float(phi), 0.0)


def kerr_phases(params: HamiltonianParams, t: float, dim: int, include_detuning: bool = False) -> np.ndarray:
    """Phases that undo ``t`` of ground-state free evolution.

    With ``include_detuning=False`` only the Kerr terms are cancelled (the
    frame detuning is treated as zero); with ``True`` the linear detuning
    term is cancelled as well.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    p = params if include_detuning else params.replace(delta=0.0)
    return level_energy(np.arange(dim), False, p) * t


def phases_to_json(theta) -> str:
    return json.dumps([float(x) for x in np.asarray(theta, dtype=float)])


def phases_from_json(text: str) -> np.ndarray:
    return np.asarray(json.loads(text), dtype=float)
