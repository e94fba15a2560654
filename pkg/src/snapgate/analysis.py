"""Wigner functions, density-matrix reconstruction and quick-look figures.

Wigner convention: ``W(alpha) = (2/pi) Tr[D(alpha) P D(alpha)^dag rho]`` with
the parity ``P = (-1)^n``, so that ``integral W d^2 alpha = 1`` over the
plane ``alpha = x + i p`` and ``|W| <= 2/pi``.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import CoverageError, CoverageWarning, DomainError, UnderdeterminedError
from .fock import (
    TRUNCATION_GUARD,
    CavityState,
    DensityMatrix,
    annihilation,
    coherent_state,
    fidelity,
    fix_gauge,
    phasor_view,
)

WIGNER_BOUND = 2 / np.pi
DEFAULT_EXTENT = 3.0
DEFAULT_STEP = 0.1
# below this eigenvalue a density-matrix component is dropped from the sum
_RANK_CUTOFF = 1e-14
_CHUNK = 512


def default_axis(extent: float = DEFAULT_EXTENT, step: float = DEFAULT_STEP) -> np.ndarray:
    """Symmetric grid ``[-extent, extent]`` including both ends."""
    count = int(round(2 * extent / step)) + 1
    return np.linspace(-extent, extent, count)


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """``values[i, j] = W(xs[j] + i ps[i])``."""

    xs: np.ndarray
    ps: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> tuple:
        return float(self.xs[1] - self.xs[0]), float(self.ps[1] - self.ps[0])

    def integral(self) -> float:
        """Trapezoid rule over the grid; approaches 1 once the grid covers the state."""
        return float(np.trapezoid(np.trapezoid(self.values, self.xs, axis=1), self.ps))

    def center(self) -> complex:
        """First moment ``integral alpha W / integral W``."""
        x, p = np.meshgrid(self.xs, self.ps)
        norm = np.trapezoid(np.trapezoid(self.values, self.xs, axis=1), self.ps)
        cx = np.trapezoid(np.trapezoid(x * self.values, self.xs, axis=1), self.ps)
        cp = np.trapezoid(np.trapezoid(p * self.values, self.xs, axis=1), self.ps)
        return complex(cx / norm, cp / norm)

    def at(self, alpha: complex) -> float:
        """Value at the grid point nearest ``alpha``."""
        j = int(np.argmin(np.abs(self.xs - alpha.real)))
        i = int(np.argmin(np.abs(self.ps - alpha.imag)))
        return float(self.values[i, j])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("# W(alpha) = (2/pi) <D(alpha) P D(alpha)^dag>, integral over d^2alpha = 1\n")
        out.write("# x = Re(alpha), p = Im(alpha)\n")
        out.write("x,p,W\n")
        for i, p in enumerate(self.ps):
            for j, x in enumerate(self.xs):
                out.write(f"{x:.6f},{p:.6f},{self.values[i, j]:.12e}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "WignerGrid":
        rows = np.loadtxt(io.StringIO(text), delimiter=",", comments="#", skiprows=3, ndmin=2)
        xs = np.unique(rows[:, 0])
        ps = np.unique(rows[:, 1])
        return cls(xs, ps, rows[:, 2].reshape(ps.size, xs.size))


class _DisplacementFactory:
    """Spectral form of ``D(alpha)`` in a padded basis.

    ``D(r e^{i phi}) = R(phi) V exp(-i r lam) V^dag R(phi)^dag`` where
    ``V lam V^dag`` diagonalizes ``i (a^dag - a)`` and ``R(phi) = exp(i phi n)``.
    One eigendecomposition serves every grid point.
    """

    def __init__(self, n_pad: int):
        a = annihilation(n_pad)
        self.n_pad = n_pad
        self.lam, self.vecs = np.linalg.eigh(1j * (a.conj().T - a))
        self.photons = np.arange(n_pad)

    def adjoint_apply(self, alphas, kets):
        """``D(alpha)^dag |k>`` for every alpha (rows) and ket ``k``: shape (points, kets, n_pad)."""
        alphas = np.asarray(alphas, dtype=complex)
        r = np.abs(alphas)
        phi = np.angle(alphas)
        rot = np.exp(-1j * np.outer(phi, self.photons))  # R(phi)^dag
        # R^dag psi, then V^dag, the diagonal, V; a trailing R only moves phases
        y = rot[:, None, :] * kets[None, :, :]
        y = y @ self.vecs.conj()
        y = y * np.exp(1j * np.outer(r, self.lam))[:, None, :]
        return y @ self.vecs.T

    def block(self, alphas, dim):
        """Top-left ``dim x dim`` block of ``D(alpha) P D(alpha)^dag`` for every alpha."""
        alphas = np.asarray(alphas, dtype=complex)
        r = np.abs(alphas)
        phi = np.angle(alphas)
        rows = np.exp(1j * np.outer(phi, self.photons[:dim]))[:, :, None] * self.vecs[None, :dim, :]
        rows = rows * np.exp(-1j * np.outer(r, self.lam))[:, None, :]
        rows = rows @ self.vecs.conj().T  # (points, dim, n_pad) = D[:dim, :] R^dag ... up to R
        rows = rows * np.exp(-1j * np.outer(phi, self.photons))[:, None, :]
        parity = (-1.0) ** self.photons
        return (rows * parity) @ np.swapaxes(rows.conj(), 1, 2)


def _padded_dim(dim, max_radius):
    # displaced content reaches about (sqrt(n) + |alpha|)^2 photons; pad with
    # a few standard deviations on top
    reach = math.sqrt(dim) + max_radius
    return int(math.ceil(reach**2 + 6 * reach + 20))


def _spectral(rho):
    if isinstance(rho, CavityState):
        return np.array([1.0]), rho.amplitudes[None, :].copy(), rho.leakage()
    if isinstance(rho, DensityMatrix):
        if rho.joint:
            rho = rho.cavity()
        w, v = np.linalg.eigh(rho.matrix)
        keep = w > _RANK_CUTOFF
        w, v = w[keep], v[:, keep].T
        # same edge as CavityState.leakage
        leak = float(np.sum(rho.populations[-2:]))
        return w, v, leak
    if getattr(rho, "is_joint", False):
        return _spectral(rho.cavity_density())
    raise DomainError(f"cannot compute a Wigner function of {type(rho).__name__}")


def wigner(state, xs=None, ps=None, guard: float = TRUNCATION_GUARD) -> WignerGrid:
    """Wigner function of a cavity state or density matrix on the grid ``xs x ps``.

    A joint qubit-cavity state is first reduced to the cavity. Raises
    :class:`CoverageError` if the state has more than ``guard`` population
    near its truncation edge (the grid values would then depend on the
    cutoff); warns with :class:`CoverageWarning` if the grid integral is off
    by more than 1e-2, meaning the grid does not cover the state.
    """
    xs = default_axis() if xs is None else np.asarray(xs, dtype=float)
    ps = default_axis() if ps is None else np.asarray(ps, dtype=float)
    if xs.size < 2 or ps.size < 2:
        raise DomainError("grid needs at least two points per axis")
    weights, kets, leak = _spectral(state)
    if leak > guard:
        raise CoverageError(f"state has {leak:.2e} population at its truncation edge")
    dim = kets.shape[1]
    alphas = (xs[None, :] + 1j * ps[:, None]).ravel()
    factory = _DisplacementFactory(_padded_dim(dim, float(np.max(np.abs(alphas)))))
    padded = np.zeros((kets.shape[0], factory.n_pad), dtype=complex)
    padded[:, :dim] = kets
    parity = (-1.0) ** factory.photons
    values = np.empty(alphas.size)
    for start in range(0, alphas.size, _CHUNK):
        z = factory.adjoint_apply(alphas[start : start + _CHUNK], padded)
        values[start : start + _CHUNK] = WIGNER_BOUND * np.einsum("pkn,n,k->p", np.abs(z) ** 2, parity, weights)
    grid = WignerGrid(xs, ps, values.reshape(ps.size, xs.size))
    if xs.size > 2 and ps.size > 2 and abs(grid.integral() - 1.0) > 1e-2:
        warnings.warn(f"grid integral {grid.integral():.4f}: grid does not cover the state", CoverageWarning, stacklevel=2)
    return grid


# -- reconstruction -----------------------------------------------------------


def _hermitian_design(blocks):
    """Rows mapping the real parameters of a Hermitian rho to ``Tr[M rho]``.

    Parameters are the diagonal, then ``Re rho_jk`` and ``Im rho_jk`` for j < k.
    """
    dim = blocks.shape[1]
    iu = np.triu_indices(dim, 1)
    diag = np.real(np.diagonal(blocks, axis1=1, axis2=2))
    upper = blocks[:, iu[0], iu[1]]
    # Tr[M rho] picks up M_jk rho_kj + M_kj rho_jk = 2 Re(M_jk conj(rho_jk))
    return np.hstack([diag, 2 * upper.real, 2 * upper.imag]), iu


def project_to_density(matrix) -> np.ndarray:
    """Nearest trace-one positive semidefinite matrix in Frobenius norm.

    The eigenvectors are kept and the eigenvalues are projected onto the
    probability simplex, ``lam_i -> max(lam_i - tau, 0)`` with ``tau`` fixing
    the trace.
    """
    matrix = np.asarray(matrix, dtype=complex)
    matrix = 0.5 * (matrix + matrix.conj().T)
    lam, vecs = np.linalg.eigh(matrix)
    desc = lam[::-1]
    cumulative = np.cumsum(desc) - 1.0
    idx = np.arange(1, desc.size + 1)
    k = np.nonzero(desc - cumulative / idx > 0)[0][-1]
    tau = cumulative[k] / (k + 1)
    clipped = np.maximum(lam - tau, 0.0)
    return (vecs * clipped) @ vecs.conj().T


def wigner_design(alphas, dim: int) -> np.ndarray:
    """``(2/pi) D(alpha) P D(alpha)^dag`` truncated to ``dim``, stacked over alphas."""
    alphas = np.asarray(alphas, dtype=complex).ravel()
    factory = _DisplacementFactory(_padded_dim(dim, float(np.max(np.abs(alphas)))))
    out = np.empty((alphas.size, dim, dim), dtype=complex)
    for start in range(0, alphas.size, _CHUNK):
        out[start : start + _CHUNK] = WIGNER_BOUND * factory.block(alphas[start : start + _CHUNK], dim)
    return out


def reconstruct_dm(alphas, values, dim: int) -> DensityMatrix:
    """Density matrix with cutoff ``dim`` from Wigner samples ``values`` at ``alphas``.

    Linear least-squares inversion over Hermitian matrices, then projection
    onto the trace-one positive cone. A :class:`WignerGrid` can be passed as
    ``alphas`` (with ``values=None``).
    """
    if isinstance(alphas, WignerGrid):
        grid = alphas
        alphas = (grid.xs[None, :] + 1j * grid.ps[:, None]).ravel()
        values = grid.values.ravel()
    alphas = np.asarray(alphas, dtype=complex).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if alphas.size != values.size:
        raise DomainError("need one Wigner value per sample point")
    if dim < 1:
        raise DomainError("dim must be positive")
    if alphas.size < dim * dim:
        raise UnderdeterminedError(f"{alphas.size} samples cannot fix {dim * dim} parameters")
    design, iu = _hermitian_design(wigner_design(alphas, dim))
    rank = np.linalg.matrix_rank(design)
    if rank < dim * dim:
        raise UnderdeterminedError(f"sample set has rank {rank} < {dim * dim}")
    x, *_ = np.linalg.lstsq(design, values, rcond=None)
    rho = np.diag(x[:dim]).astype(complex)
    m = iu[0].size
    rho[iu] = x[dim : dim + m] + 1j * x[dim + m :]
    rho[iu[1], iu[0]] = np.conj(rho[iu])
    return DensityMatrix(project_to_density(rho))


def reconstruct_from_phasors(populations, neighbor_phases, gauge: bool = True) -> CavityState:
    """Pure state from ``p(n)`` and neighbour phases ``arg(c_{n+1}^* c_n)``.

    ``neighbor_phases[n]`` links components ``n`` and ``n + 1``; the chain is
    anchored at ``arg c_0 = 0``.
    """
    populations = np.asarray(populations, dtype=float)
    neighbor_phases = np.asarray(neighbor_phases, dtype=float)
    if np.any(populations < -1e-12):
        raise DomainError("populations must be non-negative")
    if neighbor_phases.size != populations.size - 1:
        raise DomainError("need one neighbour phase per adjacent pair")
    phases = np.concatenate([[0.0], -np.cumsum(neighbor_phases)])
    amps = np.sqrt(np.clip(populations, 0.0, None)) * np.exp(1j * phases)
    state = CavityState.normalized(amps)
    return CavityState(fix_gauge(state.amplitudes)) if gauge else state


# -- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class CoherentReport:
    beta: complex
    fidelity: float
    best_beta: complex
    best_fidelity: float

    def to_dict(self) -> dict:
        return {
            "beta": [self.beta.real, self.beta.imag],
            "fidelity": self.fidelity,
            "best_beta": [self.best_beta.real, self.best_beta.imag],
            "best_fidelity": self.best_fidelity,
        }


def coherent_fidelity_report(state, beta: complex) -> CoherentReport:
    """Fidelity to ``|beta>`` and to the best-matching coherent state.

    The best match is searched over complex amplitudes, starting from
    ``<a>``; a distorted state is usually also rotated.
    """
    if isinstance(state, DensityMatrix):
        rho = state.cavity() if state.joint else state
        dim = rho.dim
        mean_a = complex(np.trace(annihilation(dim) @ rho.matrix))
    elif isinstance(state, CavityState):
        rho = state
        dim = state.dim
        mean_a = complex(np.vdot(state.amplitudes, annihilation(dim) @ state.amplitudes))
    else:
        rho = state.cavity_density()
        dim = rho.dim
        mean_a = complex(np.trace(annihilation(dim) @ rho.matrix))
    f0 = fidelity(rho, coherent_state(beta, dim))

    def cost(x):
        return -fidelity(rho, coherent_state(complex(x[0], x[1]), dim))

    starts = [(mean_a.real, mean_a.imag), (complex(beta).real, complex(beta).imag)]
    best = min((minimize(cost, s, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12}) for s in starts), key=lambda r: r.fun)
    best_beta = complex(best.x[0], best.x[1])
    best_f = -float(best.fun)
    if f0 >= best_f:
        best_beta, best_f = complex(beta), f0
    return CoherentReport(complex(beta), f0, best_beta, best_f)


# -- figures ----------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # stable element ids so identical data gives identical SVG bytes
    matplotlib.rcParams["svg.hashsalt"] = "snapgate"
    return plt


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def wigner_svg(grid: WignerGrid, title: str = "") -> str:
    """Heat map on a symmetric color scale of +-2/pi."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    mesh = ax.pcolormesh(grid.xs, grid.ps, grid.values, cmap="RdBu_r", vmin=-WIGNER_BOUND, vmax=WIGNER_BOUND, shading="nearest")
    fig.colorbar(mesh, ax=ax, label="W")
    ax.set_xlabel("Re alpha")
    ax.set_ylabel("Im alpha")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    text = _svg(fig)
    plt.close(fig)
    return text


def phasor_svg(state: CavityState, n_max: int | None = None, title: str = "") -> str:
    """Component amplitudes as arrows: length ``|c_n|``, angle ``arg c_n``."""
    plt = _pyplot()
    view = phasor_view(state)
    if n_max is None:
        n_max = min(int(np.max(np.nonzero(view.magnitudes > 1e-3)[0], initial=0)) + 1, state.dim - 1)
    fig, ax = plt.subplots(figsize=(0.6 * (n_max + 1) + 1.5, 2.2))
    for n in range(n_max + 1):
        m = view.magnitudes[n]
        ph = view.phases[n] if view.defined[n] else 0.0
        ax.annotate("", xy=(n + 0.45 * m * math.cos(ph), 0.45 * m * math.sin(ph)), xytext=(n, 0.0), arrowprops={"arrowstyle": "->"})
        ax.add_patch(plt.Circle((n, 0.0), 0.45 * m, fill=False, lw=0.5, color="0.6"))
    ax.set_xlim(-0.6, n_max + 0.6)
    ax.set_ylim(-0.55, 0.55)
    ax.set_aspect("equal")
    ax.set_yticks([])
    ax.set_xticks(range(n_max + 1))
    ax.set_xlabel("n")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    text = _svg(fig)
    plt.close(fig)
    return text


def traces_svg(waits, traces: dict, ylabel: str, title: str = "") -> str:
    """Line plot of several traces against wait time in microseconds."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, y in traces.items():
        ax.plot(np.asarray(waits) * 1e6, y, lw=1, label=label)
    ax.set_xlabel("wait (us)")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=6, ncol=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    text = _svg(fig)
    plt.close(fig)
    return text
