import json
import math

import numpy as np
import pytest

from cbf import cli, io
from cbf.config import ConfigError, SCHEMA, defaults, parse_config, render_defaults


def test_empty_input_reports_missing_pulse():
    with pytest.raises(ConfigError) as exc:
        parse_config("")
    assert [i.message for i in exc.value.issues] == ["missing section: pulse"]


def test_minimal_config_echoes_defaults():
    cfg = parse_config("[pulse]\nsigma = 2e-7\n")
    d = defaults()
    assert cfg["pulse"]["sigma"] == 2e-7
    for sec in SCHEMA:
        if sec != "pulse":
            assert cfg[sec] == d[sec]


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError) as exc:
        parse_config("[pulse]\nsigma = 2e-7\n\nsigma = 3e-7\n")
    msg = str(exc.value)
    assert "lines 2 and 4" in msg


def test_all_errors_collected():
    text = "[pulse]\nsigma = -1\nwidth = 3\n[geometry]\ncount = 0\n[nope]\nx = 1\nstray line\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, source="a.cfg")
    issues = exc.value.issues
    assert {i.line for i in issues} == {2, 3, 5, 6, 8}
    assert all(i.path == "a.cfg" for i in issues)


def test_cross_checks():
    with pytest.raises(ConfigError, match="reference_index"):
        parse_config("[pulse]\n[geometry]\ncount = 4\nreference_index = 4\n")
    with pytest.raises(ConfigError, match="amplitudes"):
        parse_config("[pulse]\n[scene]\ndepths_mm = [40, 50]\namplitudes = [1]\n")


def test_value_types():
    cfg = parse_config('[pulse]\nf0 = 3000000\n[kappa]\npolicy = random\n[geometry]\nwindow = "hanning"\n')
    assert isinstance(cfg["pulse"]["f0"], float)
    assert cfg["kappa"]["policy"] == "random" and cfg["geometry"]["window"] == "hanning"
    with pytest.raises(ConfigError):
        parse_config("[pulse]\n[kappa]\nK = 2.5\n")


def test_render_defaults_round_trips():
    text = render_defaults("image")
    cfg = parse_config(text, command="image")
    assert cfg.to_dict() == defaults("image")


def test_digest_tracks_seed():
    cfg = parse_config("[pulse]\n")
    assert cfg.digest() == parse_config("[pulse]\n").digest()
    assert cfg.with_seed(5).digest() != cfg.digest() and cfg.with_seed(5).seed == 5


def _run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_config_error_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[pulse]\nsigma = oops\n")
    code, _, err = _run(["fig3", "--config", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "config" and payload["issues"][0]["line"] == 2
    code, _, err = _run(["nosuch"], capsys)
    assert code == 1 and json.loads(err)["error"] == "usage"
    code, _, _ = _run(["fig3", "--config", str(tmp_path / "missing.cfg")], capsys)
    assert code == 1


def test_cli_runtime_error_exit_2(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text("[pulse]\n[kernels]\nelements = [500]\n")
    code, _, err = _run(["kernels", "--config", str(p), "--out", str(tmp_path / "o"), "--no-figures"], capsys)
    assert code == 2 and json.loads(err)["error"] == "runtime"


def test_fig3_command_reference_curve(tmp_path, capsys):
    out = tmp_path / "fig3"
    code, _, _ = _run(["fig3", "--out", str(out), "--no-figures"], capsys)
    assert code == 0
    rows = io.read_table(out / "fig3.csv")
    near = [r for r in rows if abs(float(r["offset_mm"]) - 0.29) < 1e-6]
    beyond = [float(r["snr_db"]) for r in near if float(r["t_frac"]) > 1 / 50]
    assert beyond and min(beyond) > 25


def test_image_command_blobs(tmp_path, capsys):
    out = tmp_path / "img"
    code, stdout, _ = _run(["image", "--out", str(out), "--no-figures"], capsys)
    assert code == 0
    planted = np.array([[float(r["x_m"]), float(r["z_m"])] for r in io.read_table(out / "planted.csv")])
    blobs = np.array([[float(r["x_m"]), float(r["z_m"])] for r in io.read_table(out / "blobs.csv")])
    assert len(planted) == len(blobs) == 6
    pitch = 0.25e-3
    for p in planted:
        assert np.min(np.hypot(*(blobs - p).T)) <= pitch
    pix = io.read_pgm(out / "image.pgm")
    assert pix.max() == 255
    m = json.loads((out / "metrics.json").read_text())
    assert m["maxima_hit_rate"] == 1.0


def test_manifest_is_reproducible(tmp_path, capsys):
    cfg = tmp_path / "k.cfg"
    cfg.write_text("[pulse]\n[kernels]\nindices = [3]\nelements = [31, 40]\n")
    for d in ("a", "b"):
        assert _run(["kernels", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / d)], capsys)[0] == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "manifest.json").read_bytes()
    m = json.loads(a)
    assert m["seed"] == 9 and m["command"] == "kernels"
    assert set(m["artifacts"]) == {"kernels.csv", "kernels.png"}
    import hashlib
    assert m["artifacts"]["kernels.csv"] == hashlib.sha256((tmp_path / "a" / "kernels.csv").read_bytes()).hexdigest()


def test_recover_and_xample_commands(tmp_path, capsys):
    cfg = tmp_path / "r.cfg"
    cfg.write_text("[pulse]\nsigma = 216e-9\nf0 = 3.5e6\n[scene]\ndepths_mm = [40, 55.5, 71]\n"
                   "phases_rad = [0.3, -1.1, 2.0]\n[recover]\nmethod = \"matrix_pencil\"\n")
    code, stdout, _ = _run(["recover", "--config", str(cfg), "--out", str(tmp_path / "r"), "--no-figures"],
                           capsys)
    assert code == 0
    rec = io.read_table(tmp_path / "r" / "recover.csv")
    truth = io.read_table(tmp_path / "r" / "truth.csv")
    for a, b in zip(rec, truth):
        assert abs(float(a["delay_s"]) - float(b["delay_s"])) < 1e-9
    ph = [math.atan2(float(r["im_b"]), float(r["re_b"])) for r in rec]
    assert np.allclose(ph, [0.3, -1.1, 2.0], atol=1e-2)

    cfg.write_text("[pulse]\nsigma = 216e-9\nf0 = 3.5e6\n[geometry]\ncount = 24\nreference_index = 11\n"
                   "[scene]\ndepths_mm = [40, 60]\n[kappa]\nK = 30\n")
    code, stdout, _ = _run(["xample", "--config", str(cfg), "--out", str(tmp_path / "x"), "--no-figures"],
                           capsys)
    assert code == 0
    s = json.loads(stdout)["summary"]
    assert s["within_bound"] and s["relative_gap"] < 0.1
    assert (tmp_path / "x" / "matrices.bin").exists()


def test_threads_env_fallback(monkeypatch):
    from cbf.phantom import resolve_threads
    monkeypatch.setenv("CBF_THREADS", "3")
    assert resolve_threads() == 3 and resolve_threads(2) == 2
