import json

import numpy as np
import pytest

from tubeid.cli import EXIT_CONFIG, EXIT_INSTABILITY, EXIT_NO_CONVERGENCE, main, read_field_dump

COARSE = "[fdm]\ndx = 0.002\ndt = 1e-6\n"
TINY = (
    COARSE
    + "[network]\nwidth = 8\nblocks = 1\n"
    + "[collocation]\nn_E = 40\nn_B = 16\nn_C = 16\nn_P = 16\nn_M = 16\n"
    + "[training]\nepochs = 4\nfreeze_epochs = 2\n"
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_gen_excitation(tmp_path):
    assert main(["gen-excitation", "--out", str(tmp_path / "ex"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "ex" / "summary.json").read_text())
    assert summary["harmonics"] == [1, 2, 3, 4, 5, 6, 7]
    manifest = json.loads((tmp_path / "ex" / "manifest.json").read_text())
    assert set(manifest["files"]) == {"config.json", "excitation.csv", "summary.json"}
    lines = (tmp_path / "ex" / "excitation.csv").read_text().splitlines()
    assert lines[0] == "t_s,v_m_per_s" and len(lines) == 8193


def test_fdm_forward_outputs_and_rerun(tmp_path):
    cfg = write(tmp_path, "c.toml", COARSE)
    out = tmp_path / "fdm"
    assert main(["fdm-forward", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["cfl"] == pytest.approx(0.17, abs=1e-3)
    dump = read_field_dump(out / "field.bin")
    assert dump["p"].shape == (summary["nt"], summary["nx"]) == (3823, 51)
    waves = np.loadtxt(out / "waveforms.csv", delimiter=",", skiprows=1)
    assert (out / "waveforms.csv").read_text().startswith("x_m,t_s,p_Pa,U_m3_per_s\n")
    outlet = waves[waves[:, 0] == 0.1]
    np.testing.assert_array_equal(outlet[:, 2], dump["p"][:, -1])
    np.testing.assert_array_equal(outlet[:, 1], np.arange(3823) * summary["dt"])
    assert summary["probes_m"] == [0.0, 0.1]
    # rerun from the stored effective configuration
    again = tmp_path / "again"
    assert main(["fdm-forward", "--config", str(out / "config.json"), "--out", str(again), "--quiet"]) == 0
    assert files(out) == files(again)


def test_fdm_probes_select_nearest_nodes(tmp_path):
    cfg = write(tmp_path, "c.toml", COARSE + "periods_max = 2\nsteady_tol = 1.0\nprobes = [0.05, 0.0411]\n")
    out = tmp_path / "fdm"
    assert main(["fdm-forward", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["probes_m"] == pytest.approx([0.05, 0.042])
    dump = read_field_dump(out / "field.bin")
    waves = np.loadtxt(out / "waveforms.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(waves[: summary["nt"], 3], dump["U"][:, 25])


def test_probe_outside_tube_is_config_error(tmp_path):
    cfg = write(tmp_path, "c.toml", "[fdm]\nprobes = [0.2]\n")
    assert main(["fdm-forward", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_CONFIG


def test_fdm_forward_table_defaults_report_cfl(tmp_path):
    out = tmp_path / "fdm"
    assert main(["fdm-forward", "--out", str(out), "--quiet"]) == 0
    assert json.loads((out / "summary.json").read_text())["cfl"] == pytest.approx(0.17, abs=5e-4)


def test_unknown_key_gives_config_error_json(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", "[network]\nwidht = 3\n")
    code = main(["fdm-forward", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet", "--error-json"])
    assert code == EXIT_CONFIG == 2
    err = json.loads(capsys.readouterr().out)
    assert err["exit_code"] == 2 and "widht" in err["message"]


def test_missing_reference_is_config_error(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY + f"[paths]\nreference_fdm = '{tmp_path / 'missing'}'\n")
    assert main(["pinn-forward", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_CONFIG


def test_cfl_violation_is_instability(tmp_path):
    cfg = write(tmp_path, "c.toml", "[fdm]\ndt = 4e-6\n")
    out = tmp_path / "o"
    assert main(["fdm-forward", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_INSTABILITY == 3
    assert json.loads((out / "error.json").read_text())["error"] == "NumericalInstability"


def test_nonconvergence_exit_code(tmp_path):
    cfg = write(tmp_path, "c.toml", COARSE + "periods_max = 2\nsteady_tol = 0.0\n")
    out = tmp_path / "o"
    assert main(["fdm-forward", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_NO_CONVERGENCE == 4
    assert json.loads((out / "manifest.json").read_text())["status"] == "not-converged"
    assert (out / "field.bin").is_file()


def test_pinn_forward_without_reference(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY)
    out = tmp_path / "pf"
    assert main(["pinn-forward", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert "comparison" not in summary
    assert (out / "model.ckpt").is_file()
    log = (out / "training_log.csv").read_text().splitlines()
    assert len(log) == 5 and log[0].startswith("epoch,L_E,L_B")


def test_pinn_forward_with_reference(tmp_path):
    cfg = write(tmp_path, "c.toml", COARSE)
    ref = tmp_path / "fdm"
    assert main(["fdm-forward", "--config", cfg, "--out", str(ref), "--quiet"]) == 0
    cfg2 = write(tmp_path, "c2.toml", TINY + f"[paths]\nreference_fdm = '{ref}'\n")
    out = tmp_path / "pf"
    assert main(["pinn-forward", "--config", cfg2, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["comparison"]["relative_l2"] > 0
    header = (out / "pinn_outlet.csv").read_text().splitlines()[0]
    assert header == "t_s,p_hat_Pa,p_fdm_Pa"


def test_identify_is_byte_identical_across_runs(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY + "noise_level = 0.01\ncheckpoint_every = 2\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["identify", "--config", cfg, "--seed", "5", "--out", str(a), "--quiet"]) == 0
    assert main(["identify", "--config", cfg, "--seed", "5", "--out", str(b), "--quiet"]) == 0
    assert files(a) == files(b)
    result = json.loads((a / "result.json").read_text())
    assert result["seed"] == 5 and result["epochs"] == 4
    assert "checkpoint_0000002.ckpt" in json.loads((a / "manifest.json").read_text())["files"]
    hist = np.loadtxt(a / "error_history.csv", delimiter=",", skiprows=1)
    assert hist.shape == (4, 5)
    assert hist[0, 3] == pytest.approx(50.0) and hist[1, 4] == pytest.approx(-50.0)


def test_sensitivity_command(tmp_path):
    cfg = write(tmp_path, "c.toml", COARSE)
    out = tmp_path / "s"
    assert main(["sensitivity", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    info = json.loads((out / "sensitivity.json").read_text())
    assert info["ratio"] == pytest.approx(info["deviation_G"] / info["deviation_R"])
    assert (out / "waveforms.csv").read_text().splitlines()[0] == "t_s,p_baseline_Pa,p_G_scaled_Pa,p_R_scaled_Pa"


def test_gradcheck_command(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["gradcheck", "--out", str(out), "--quiet"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["passed"] and printed["max_relative_error"] < 1e-5
    report = json.loads((out / "gradcheck.json").read_text())
    assert report["passed"] and set(report["terms"]) == {"E", "B", "C", "P0", "P1", "M"}
