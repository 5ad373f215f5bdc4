import re
import subprocess
import sys

import numpy as np
import pytest

from rydlock import pipeline
from rydlock.cli import main
from rydlock.scenario import (SCHEMA, ConfigError, bundled_names, bundled_scenario,
                              parse_scenario)

SHORT_RUN = """
[scenario]
name = short
duration_s = 30
record_dt_s = 0.1
seed = 11

[counter]
gate_s = 0.1

[ch1]
noise_white_hz2_per_hz = 1e7
lock_noise_white_hz2_per_hz = 1e8

[ch2]
noise_white_hz2_per_hz = 1e7
lock_noise_white_hz2_per_hz = 1e8

[ch3]
noise_white_hz2_per_hz = 1e7
lock_noise_white_hz2_per_hz = 1e7
"""


def write_cfg(tmp_path, text, name="scenario.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def kv(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


# --- parsing and provenance ----------------------------------------------------------

def test_bundled_scenarios_present_and_valid():
    names = bundled_names()
    for n in ("fig3_50F.cfg", "fig3_63P.cfg", "zero_noise.cfg", "transfer_ch1.cfg"):
        assert n in names
        bundled_scenario(n)


@pytest.mark.parametrize("text,match", [
    ("[ch1]\nbogus_hz = 1\n", "unknown key"),
    ("[nonsense]\nx = 1\n", "unknown section"),
    ("[scenario]\nduration_s = fast\n", "cannot read"),
    ("[scenario]\nmode = turbo\n", "mode"),
    ("[ch3]\nengaged = maybe\n", "cannot read"),
    ("[counter]\ngate_s = 0.15\n", "multiple"),
    ("no section header\n", "malformed"),
    ("[scenario]\nseed = -3\n", "seed"),
])
def test_invalid_scenarios_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_scenario(text)


def test_echo_lists_every_parameter_with_provenance():
    sc = parse_scenario("[ch1]\nnoise_white_hz2_per_hz = 5e6\n[target]\nn = 60\n")
    echo = sc.echo()
    tags = dict(re.findall(r"^(\S+)\s*=.*# provenance: (\w+)$", echo, flags=re.M))
    lines = [l for l in echo.splitlines() if "# provenance:" in l]
    assert len(lines) == sum(len(p) for p in SCHEMA.values())
    assert set(tags.values()) <= {"paper", "default", "user"}
    assert sc.provenance[("ch1", "noise_white_hz2_per_hz")] == "user"
    assert sc.provenance[("target", "n")] == "user"
    assert sc.provenance[("ch3", "dither_depth_hz")] == "paper"
    assert sc.provenance[("ch2", "dither_depth_hz")] == "default"
    assert sc.provenance[("counter", "gate_s")] == "default"


def test_echo_round_trips():
    sc = parse_scenario(SHORT_RUN)
    again = parse_scenario(sc.echo())
    assert again.values == sc.values


def test_override_tags_user():
    sc = parse_scenario("").override("scenario", "seed", 99)
    assert sc.seed == 99 and sc.provenance[("scenario", "seed")] == "user"
    with pytest.raises(ConfigError):
        sc.override("scenario", "nope", 1)


# --- scan ----------------------------------------------------------------------------

def test_scan_default_target(tmp_path, capsys):
    out = tmp_path / "scan"
    assert main(["scan", "--out", str(out)]) == 0
    for f in ("lineshape.csv", "error_curve.csv", "scan.gp", "scan_summary.txt", "config.cfg"):
        assert (out / f).exists()
    assert (out / "error_curve.csv").read_text().startswith("detuning_hz,error_v\n")
    assert (out / "lineshape.csv").read_text().startswith("detuning_hz,signal_v\n")
    x, e = np.loadtxt(out / "error_curve.csv", delimiter=",", skiprows=1, unpack=True)
    i = np.nonzero(np.sign(e[:-1]) != np.sign(e[1:]))[0]
    i = i[np.argmin(np.abs(x[i]))]
    zero = x[i] - e[i] * (x[i + 1] - x[i]) / (e[i + 1] - e[i])
    assert abs(zero) <= 1e3
    summary = kv(out / "scan_summary.txt")
    assert abs(float(summary["zero_crossing_hz"])) <= 1e3
    assert float(summary["slope_v_per_hz"]) == pytest.approx(1e-8, rel=1e-3)
    assert summary["warning"] == "none"
    assert "50F7/2" in capsys.readouterr().out


def test_scan_beyond_range_warns(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[target]\nn = 95\nseries = F7/2\n")
    out = tmp_path / "scan95"
    assert main(["scan", "--config", cfg, "--out", str(out)]) == 0
    assert "beyond demonstrated range" in capsys.readouterr().err
    assert "beyond demonstrated range" in kv(out / "scan_summary.txt")["warning"]


def test_scan_axis2(tmp_path):
    sc = parse_scenario("[scan]\naxis = 2\nspan_hz = 20e6\npoints = 401\n")
    rep = pipeline.scan(sc, tmp_path)
    assert abs(rep.zero_crossing) <= 1e3
    assert rep.slope == pytest.approx(1e-8, rel=1e-3)


@pytest.mark.parametrize("text", ["[scenario\nname = x\n", "[ch1]\nbogus_hz = 2\n",
                                  "[scenario]\nduration_s = -5\n"])
def test_bad_config_exits_nonzero_without_outputs(tmp_path, capsys, text):
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "never"
    for cmd in ("scan", "run", "transfer"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 1
        assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]) == 3


def test_argument_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["scan", "--seed", "many"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1


# --- run -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = write_cfg(base, SHORT_RUN)
    outs = []
    for k in range(2):
        out = base / f"out{k}"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        outs.append(out)
    return cfg, outs


def test_run_outputs(short_run):
    _, (out, _) = short_run
    for f in ("trace_ch1.csv", "trace_ch2.csv", "trace_ch3.csv", "counter.csv", "adev_ch1.csv",
              "adev_ch2.csv", "adev_ch3.csv", "summary.txt", "config.cfg"):
        assert (out / f).exists(), f
    assert (out / "counter.csv").read_text().startswith("t_s,ch1_hz,ch2_hz,ch3_hz\n")
    assert (out / "trace_ch1.csv").read_text().startswith("t_s,offset_hz\n")
    assert (out / "adev_ch3.csv").read_text().startswith("tau_s,sigma_hz,n_pairs\n")
    s = kv(out / "summary.txt")
    for lab in ("ch1", "ch2", "ch3"):
        assert s[f"{lab}.lock_acquired"] == "true"
        assert float(s[f"{lab}.adev_1s_hz"]) > 0
        assert float(s[f"{lab}.adev_max_hz"]) >= float(s[f"{lab}.adev_1s_hz"])
        assert float(s[f"{lab}.piezo_saturation_fraction"]) == 0.0
    assert s["lock_lost"] == "false" and s["table_clamped"] == "false"
    assert s["counter.gate_s"] == "0.1"
    assert "# provenance: user" in (out / "config.cfg").read_text()


def test_run_is_byte_identical(short_run):
    _, (a, b) = short_run
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_output(short_run, tmp_path):
    cfg, (a, _) = short_run
    out = tmp_path / "seeded"
    assert main(["run", "--config", cfg, "--seed", "12", "--out", str(out)]) == 0
    assert (out / "counter.csv").read_bytes() != (a / "counter.csv").read_bytes()
    assert re.search(r"^seed\s*=\s*12\s+# provenance: user$", (out / "config.cfg").read_text(), re.M)


def test_adev_subcommand_reproduces_run(short_run, tmp_path):
    _, (a, _) = short_run
    out = tmp_path / "adev"
    assert main(["adev", "--counter", str(a / "counter.csv"), "--out", str(out)]) == 0
    for lab in ("ch1", "ch2", "ch3"):
        assert (out / f"adev_{lab}.csv").read_bytes() == (a / f"adev_{lab}.csv").read_bytes()
    assert (out / "adev_summary.txt").exists()


def test_adev_io_errors(tmp_path):
    assert main(["adev", "--counter", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    junk = tmp_path / "junk.csv"
    junk.write_text("hello,world\n1,2\n")
    assert main(["adev", "--counter", str(junk), "--out", str(tmp_path / "o")]) == 3


def test_zero_noise_run_has_zero_adev(tmp_path):
    out = tmp_path / "zero"
    assert main(["run", "--config", "zero_noise", "--out", str(out)]) == 0
    s = kv(out / "summary.txt")
    for lab in ("ch1", "ch2", "ch3"):
        assert float(s[f"{lab}.adev_max_hz"]) <= 1e-6
    for lab in ("ch1", "ch2", "ch3"):
        _, sig, _ = np.loadtxt(out / f"adev_{lab}.csv", delimiter=",", skiprows=1, unpack=True)
        assert np.all(sig <= 1e-6)


def test_short_run_skips_adev_with_note(tmp_path):
    cfg = write_cfg(tmp_path, "[scenario]\nduration_s = 5\n")
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert not (out / "adev_ch1.csv").exists()
    assert "Allan deviation skipped" in (out / "summary.txt").read_text()


def test_lock_loss_exit_codes(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[scenario]\nduration_s = 2\n[counter]\ngate_s = 0.1\n"
                              "[ch3]\nstatic_offset_hz = 50e6\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--strict"]) == 2
    s = kv(tmp_path / "b" / "summary.txt")
    assert s["lock_lost"] == "true"
    assert "lock lost" in capsys.readouterr().err


@pytest.mark.slow
def test_waveform_mode_flag(tmp_path):
    cfg = write_cfg(tmp_path, "[scenario]\nduration_s = 0.2\nrecord_dt_s = 0.001\n"
                              "[counter]\ngate_s = 0.01\n")
    out = tmp_path / "w"
    assert main(["run", "--config", cfg, "--mode", "waveform", "--out", str(out)]) == 0
    assert re.search(r"^mode\s*=\s*waveform\s+# provenance: user$", (out / "config.cfg").read_text(), re.M)
    assert kv(out / "summary.txt")["mode"] == "waveform"


# --- transfer ------------------------------------------------------------------------

def test_transfer_channel1(tmp_path):
    out = tmp_path / "t1"
    assert main(["transfer", "--config", "transfer_ch1", "--out", str(out)]) == 0
    s = kv(out / "transfer_report.txt")
    assert float(s["ch1_to_ch2.slope"]) == pytest.approx(780 / 776, rel=5e-3)
    assert float(s["ch1_to_ch3.slope"]) == pytest.approx(780 / 1260, rel=5e-3)
    rows = (out / "transfer.csv").read_text().splitlines()
    assert rows[0] == "level_hz,ch1_hz,ch2_hz,ch3_hz,kept"
    assert len(rows) == 6


def test_transfer_channel2_annotated(tmp_path):
    out = tmp_path / "t2"
    assert main(["transfer", "--channel", "2", "--levels=-1e6,0,1e6",
                 "--out", str(out)]) == 0
    text = (out / "transfer_report.txt").read_text()
    assert "about 0.1x" in text
    slope = float(kv(out / "transfer_report.txt")["ch2_to_ch3.slope"])
    assert 0 < slope < 776 / 1260 * 1.005


@pytest.mark.parametrize("levels", ["1e6", "1e6,1e6,2e6", "a,b,c"])
def test_transfer_needs_three_levels(tmp_path, levels):
    out = tmp_path / "t"
    assert main(["transfer", "--levels", levels, "--out", str(out)]) == 1
    assert not out.exists()


def test_transfer_excludes_lost_levels(tmp_path):
    sc = parse_scenario("")
    # 600 MHz exceeds the combined actuator range of laser 1
    rep = pipeline.transfer(sc, tmp_path, 1, [-1e6, 0.0, 1e6, 600e6])
    assert list(rep.kept) == [True, True, True, False]
    assert any("lock lost on ch1" in n for n in rep.notes)
    assert rep.factors["ch3"].slope == pytest.approx(780 / 1260, rel=5e-3)
    assert (tmp_path / "transfer.csv").read_text().splitlines()[4].endswith(",0")


def test_transfer_excludes_levels_outside_tables(tmp_path):
    rep = pipeline.transfer(parse_scenario(""), tmp_path, 2, [-1e6, 0.0, 1e6, 10e6])
    assert list(rep.kept) == [True, True, True, False]
    assert any("lock-point tables" in n for n in rep.notes)


def test_console_entry_point(tmp_path):
    out = tmp_path / "cli"
    res = subprocess.run([sys.executable, "-m", "rydlock.cli", "scan", "--out", str(out)],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    assert (out / "error_curve.csv").exists()
