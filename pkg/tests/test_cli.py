import json
import subprocess
import sys

import numpy as np
import pytest

from snapgate.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main, parse_state, selectivity_row
from snapgate.config import default_config_text, load_config, parse_config
from snapgate.dispersive import KHZ, REFERENCE_PARAMS
from snapgate.errors import DomainError
from snapgate.fock import coherent_state


def run(tmp_path, *argv):
    code = main([*argv, "--out", str(tmp_path)])
    return code


def manifest(tmp_path, command):
    (path,) = list((tmp_path / command).glob("*/manifest.json"))
    return json.loads(path.read_text())


def test_default_config_matches_reference():
    cfg = load_config()
    for k, v in REFERENCE_PARAMS.to_khz().items():
        assert cfg.params.to_khz()[k] == pytest.approx(v, abs=1e-12)
    assert cfg.excited_frame_shift == pytest.approx(-8300 * KHZ)
    assert cfg.decoherence is None and cfg.mode == "ideal" and cfg.dim == 40
    assert "[hamiltonian]" in default_config_text()


def test_config_layering_and_errors(tmp_path):
    cfg = parse_config("[hamiltonian]\nkerr = -100\n[decoherence]\nenabled = true\ncavity_kappa = 1000\n")
    assert cfg.params.kerr == pytest.approx(-100 * KHZ)
    assert cfg.params.chi == pytest.approx(REFERENCE_PARAMS.chi)
    assert cfg.decoherence.cavity_kappa == 1000
    for bad in ("[run]\nmode = fast\n", "[hamiltonian]\nkerr = abc\n", "[run]\ndim = 2\n", "not an ini"):
        with pytest.raises(DomainError):
            parse_config(bad)
    with pytest.raises(DomainError):
        load_config(tmp_path / "missing.cfg")
    assert cfg.replace(mode=None, dim=20).dim == 20


def test_parse_state(tmp_path):
    assert parse_state("fock:2", 10).populations[2] == pytest.approx(1.0)
    assert abs(parse_state("coherent:1,0.5", 20).amplitudes @ coherent_state(1 + 0.5j, 20).amplitudes.conj()) == pytest.approx(1)
    odd = parse_state("cat:1.5:odd", 30)
    assert np.sum(odd.populations[::2]) < 1e-12
    path = tmp_path / "s.json"
    path.write_text(coherent_state(0.5, 10).to_json())
    assert parse_state(str(path), 10).dim == 10
    for bad in ("cat:1:weird", "fock:x", "nothing"):
        with pytest.raises(DomainError):
            parse_state(bad, 10)


def test_fit_hamiltonian(tmp_path, capsys):
    assert run(tmp_path, "fit-hamiltonian", "--qubit-excited") == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    folder = tmp_path / "fit-hamiltonian" / "seed0-ideal-excited"
    fit = json.loads((folder / "fit.json").read_text())
    assert abs(fit["ground"]["khz"]["kerr"]["value"] + 107.9) < 0.5
    assert abs(fit["excited"]["khz"]["chi2"]["value"] - 48.8) < 0.8
    for name in ("phase_traces_ground.csv", "phase_traces_excited.csv", "comparison.csv", "manifest.json"):
        assert (folder / name).exists()
    assert out["command"] == "fit-hamiltonian"


def test_fit_noise_zero_and_failure(tmp_path):
    assert run(tmp_path, "fit-hamiltonian", "--noise", "0", "--label", "clean") == EXIT_OK
    assert run(tmp_path, "fit-hamiltonian", "--noise", "-1", "--label", "neg") == EXIT_INVALID
    # noise swamps the 0.08 interference contrast
    assert run(tmp_path, "fit-hamiltonian", "--noise", "0.5", "--label", "swamped") == EXIT_NUMERICAL
    status = json.loads((tmp_path / "fit-hamiltonian" / "swamped" / "manifest.json").read_text())["status"]
    assert status == "failed"


def test_kerr_correct(tmp_path):
    assert run(tmp_path, "kerr-correct", "--steps", "14") == EXIT_OK
    folder = tmp_path / "kerr-correct" / "seed0-ideal-steps14"
    table = json.loads((folder / "fidelity.json").read_text())
    assert min(r["corrected"] for r in table["rows"]) > 1 - 1e-10
    assert (folder / "wigner_step14_corrected.csv").exists()
    assert (folder / "wigner_step14_uncorrected.svg").exists()
    assert run(tmp_path, "kerr-correct", "--steps", "0") == EXIT_INVALID


def test_fock_create_deterministic(tmp_path):
    assert run(tmp_path / "a", "fock-create") == EXIT_OK
    assert run(tmp_path / "b", "fock-create") == EXIT_OK
    a = (tmp_path / "a" / "fock-create" / "seed0-ideal" / "fock_creation.json").read_bytes()
    b = (tmp_path / "b" / "fock-create" / "seed0-ideal" / "fock_creation.json").read_bytes()
    assert a == b
    result = json.loads(a)["result"]
    assert result["beta1"] == pytest.approx(1.14, abs=0.05)
    assert result["beta2"] == pytest.approx(-0.58, abs=0.05)
    assert result["fidelity"] >= 0.98
    names = {p.name for p in (tmp_path / "a" / "fock-create" / "seed0-ideal").iterdir()}
    for stem in ("a_displaced", "b_snap", "c_final"):
        assert any(n.startswith(f"wigner_{stem}") for n in names)
        assert any(n.startswith(f"phasor_{stem}") for n in names)
    assert a == b


def test_fock_ladder(tmp_path):
    assert run(tmp_path, "fock-create", "--target", "2") == EXIT_OK
    ladder = json.loads((tmp_path / "fock-create" / "seed0-ideal-target2" / "ladder.json").read_text())
    assert ladder["block_count"] == 2


def test_wigner_and_snap_demo(tmp_path):
    assert run(tmp_path, "wigner", "fock:1") == EXIT_OK
    folder = tmp_path / "wigner" / "seed0-ideal-fock_1"
    summary = json.loads((folder / "manifest.json").read_text())["summary"]
    assert summary["min"] == pytest.approx(-2 / np.pi, abs=1e-6)
    assert summary["integral"] == pytest.approx(1.0, abs=1e-3)
    assert run(tmp_path, "wigner", "fock:45") == EXIT_INVALID
    assert run(tmp_path, "snap-demo") == EXIT_OK


def test_pulse_check(tmp_path):
    assert run(tmp_path, "pulse-check") == EXIT_OK
    text = (tmp_path / "pulse-check" / "seed0-ideal" / "selectivity.csv").read_text()
    assert "neighbour_phase_rad" in text
    _, _, transfer, off = selectivity_row(0.02, REFERENCE_PARAMS)
    assert transfer > 0.999 and off < 0.01


def test_ideal_gates_and_bad_config(tmp_path):
    assert run(tmp_path, "wigner", "fock:0", "--mode", "pulse", "--ideal-gates", "--label", "g") == EXIT_OK
    assert manifest(tmp_path, "wigner")["config"]["mode"] == "ideal"
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[run]\nmode = nope\n")
    assert run(tmp_path, "wigner", "fock:0", "--config", str(cfg)) == EXIT_INVALID


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "snapgate", "wigner", "coherent:0.5", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "wigner"
