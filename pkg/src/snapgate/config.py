"""Run configuration files.

Configs are INI files (see ``data/default_params.cfg``). Frequencies are
written as f = omega / 2pi in kHz and converted to rad/s here, so the rest of
the package only sees angular frequencies; times are in seconds and the
cavity decay rate in 1/s. Any key left out falls back to the
bundled defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .dispersive import KHZ, DecoherenceParams, HamiltonianParams
from .errors import DomainError

MODES = ("ideal", "pulse")
_HAMILTONIAN_KEYS = ("delta", "chi", "chi2", "chi3", "kerr", "kerr2")


def default_config_text() -> str:
    return resources.files("snapgate").joinpath("data/default_params.cfg").read_text()


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run depends on; ``seed`` fixes all randomness."""

    params: HamiltonianParams
    excited_frame_shift: float
    decoherence: DecoherenceParams | None = None
    mode: str = "ideal"
    dim: int = 40
    seed: int = 0
    out: Path = field(default_factory=lambda: Path("runs"))
    source: str = "<defaults>"

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim < 4:
            raise DomainError("dim must be at least 4")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        dec = self.decoherence
        return {
            "source": self.source,
            "mode": self.mode,
            "dim": self.dim,
            "seed": self.seed,
            "hamiltonian_khz": self.params.to_khz(),
            "excited_frame_shift_khz": self.excited_frame_shift / KHZ,
            "decoherence": None
            if dec is None
            else {"qubit_t1": dec.qubit_t1, "qubit_tphi": dec.qubit_tphi, "cavity_kappa": dec.cavity_kappa},
        }


def _float(section, key):
    try:
        return section.getfloat(key)
    except ValueError as exc:
        raise DomainError(f"[{section.name}] {key}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse config text layered over the bundled defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(default_config_text(), source="<defaults>")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise DomainError(f"{source}: {exc}") from None
    ham = parser["hamiltonian"]
    params = HamiltonianParams.from_khz(**{k: _float(ham, k) for k in _HAMILTONIAN_KEYS})
    dec_section = parser["decoherence"]
    decoherence = None
    if dec_section.getboolean("enabled"):
        decoherence = DecoherenceParams(
            _float(dec_section, "qubit_t1"), _float(dec_section, "qubit_tphi"), _float(dec_section, "cavity_kappa")
        )
    run = parser["run"]
    try:
        dim = run.getint("dim")
        seed = run.getint("seed")
    except ValueError as exc:
        raise DomainError(f"[run]: {exc}") from None
    return RunConfig(
        params=params,
        excited_frame_shift=_float(ham, "excited_frame_shift") * KHZ,
        decoherence=decoherence,
        mode=run.get("mode").strip(),
        dim=dim,
        seed=seed,
        out=Path(run.get("out").strip()),
        source=source,
    )


def load_config(path=None) -> RunConfig:
    """Config from ``path``, or the bundled defaults when ``path`` is None."""
    if path is None:
        return parse_config("", "<defaults>")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DomainError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
