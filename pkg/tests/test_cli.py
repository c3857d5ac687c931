import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zkgrowth import grid as zgrid
from zkgrowth.cli import ConfigError, SimulationConfig, main
from zkgrowth.grid import RealField2D, SpectralGrid, sobolev_norm, write_snapshot

SMALL = {"nx": 32, "ny": 32, "box_x": 30.0, "box_y": 30.0, "dt": 0.01, "t_end": 0.2,
         "snapshot_every": 0.1, "s_list": [1, 2]}


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


@settings(max_examples=40)
@given(st.integers(4, 64).map(lambda n: 2 * n), st.floats(0.1, 1e3), st.floats(1e-4, 1),
       st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2 ** 63 - 1),
       st.sampled_from(["gaussian", "modes"]))
def test_config_round_trip(n, box, dt, s_list, seed, init):
    cfg = SimulationConfig(nx=n, ny=n, box_x=box, box_y=box, dt=dt, s_list=s_list, seed=seed,
                           init=init, modes=[[1, 2, 0.5, None]])
    again = SimulationConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg and again.to_json() == cfg.to_json()


@pytest.mark.parametrize("bad", [{"nx": 7}, {"dt": 0}, {"s_list": [0]}, {"s_list": [1.5]},
                                 {"init": "noise"}, {"init": "file"}, {"seed": -1},
                                 {"surprise": 1}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        SimulationConfig.from_dict({**SMALL, **bad})


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, "c.json", SMALL)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("diagnostics.csv", "manifest.csv", "spectrum.csv", "norms.csv",
                 "snapshots/snap_000002.zk2d"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "diagnostics.csv")))
    assert list(rows[0]) == ["t", "mass", "energy", "h1", "hs", "gn_ratio"]
    assert len(rows) == 3


def test_simulate_seeded_modes(tmp_path):
    doc = {**SMALL, "init": "modes", "modes": [[1, 1, 0.3, None], [2, 0, 0.2, 0.0]]}
    out = []
    for seed in (1, 1, 2):
        cfg = _write(tmp_path, f"m{seed}.json", doc)
        d = tmp_path / f"r{len(out)}"
        assert main(["simulate", "--config", str(cfg), "--out", str(d), "--seed", str(seed)]) == 0
        out.append((d / "diagnostics.csv").read_bytes())
    assert out[0] == out[1] and out[0] != out[2]


def test_simulate_zero_amplitude(tmp_path):
    cfg = _write(tmp_path, "z.json", {**SMALL, "amplitude": 0.0})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 0
    for row in csv.DictReader(open(tmp_path / "z" / "diagnostics.csv")):
        assert all(float(row[k]) == 0.0 for k in ("mass", "energy", "h1", "hs", "gn_ratio"))


def test_simulate_t_end_zero(tmp_path):
    cfg = _write(tmp_path, "t0.json", {**SMALL, "t_end": 0.0})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "t0")]) == 0
    assert len(list((tmp_path / "t0" / "snapshots").iterdir())) == 1


def test_simulate_from_file(tmp_path):
    g = SpectralGrid(32, 32, 30.0, 30.0)
    x, _ = g.coordinates()
    write_snapshot(tmp_path / "u0.zk2d", RealField2D(g, 0.1 * np.cos(2 * np.pi * x / 30.0)))
    cfg = _write(tmp_path, "f.json", {**SMALL, "init": "file", "file": str(tmp_path / "u0.zk2d")})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0


def test_simulate_bad_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.json", {**SMALL, "nx": 9})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert "nx" in capsys.readouterr().err


def test_threads_flag_sets_workers(tmp_path):
    cfg = _write(tmp_path, "c.json", {**SMALL, "t_end": 0.0})
    try:
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--threads", "2"]) == 0
        assert zgrid.FFT_WORKERS == 2
    finally:
        zgrid.FFT_WORKERS = 1


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["verify", "nonsense"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


@pytest.mark.parametrize("suite", ["lemma13", "linear", "increments"])
def test_verify_suites_pass(tmp_path, suite):
    assert main(["verify", suite, "--out", str(tmp_path)]) == 0
    assert any(tmp_path.iterdir())


def test_verify_reports_first_failure(tmp_path, capsys):
    params = _write(tmp_path, "p.json", {"K1": [1.0], "eps": [0.5], "d_factor": [1.1],
                                         "k_max": 10, "k_conv": 10})
    assert main(["verify", "lemma13", "--config", str(params), "--out", str(tmp_path)]) == 0
    bad = _write(tmp_path, "q.json", {"s": [2], "n": 16, "box": 2 * np.pi})
    assert main(["verify", "increments", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.strip()


def _synthetic_manifest(path, norm_of_t, s=2):
    g = SpectralGrid(16, 16, 10.0, 10.0)
    x, y = g.coordinates()
    base = RealField2D(g, np.cos(2 * np.pi * x / 10.0))
    base = base * (1.0 / sobolev_norm(base, s))
    (path / "snapshots").mkdir(parents=True)
    t = np.concatenate([[0.0], np.geomspace(0.1, 100.0, 60)])
    with open(path / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "dt", "max_abs_u", "snapshot_path"])
        for k, tk in enumerate(t):
            rel = f"snapshots/snap_{k:06d}.zk2d"
            write_snapshot(path / rel, base * float(norm_of_t(tk)))
            w.writerow([k, repr(float(tk)), 0.1, 1.0, rel])
    return path / "manifest.csv"


def test_fit_growth_synthetic(tmp_path):
    m = _synthetic_manifest(tmp_path / "run", lambda t: (1 + t) ** 0.7)
    assert main(["fit-growth", str(m), "--out", str(tmp_path / "fit")]) == 0
    doc = json.loads((tmp_path / "fit" / "growth.json").read_text())
    assert 0.7 - 1e-9 <= doc["beta_best"] < 0.8


def test_fit_growth_constant(tmp_path):
    m = _synthetic_manifest(tmp_path / "run", lambda t: 2.0)
    assert main(["fit-growth", str(m), "--out", str(tmp_path / "fit"),
                 "--beta-grid", "0.3,0.6,0.9"]) == 0
    doc = json.loads((tmp_path / "fit" / "growth.json").read_text())
    assert doc["beta_best"] == 0.3


def test_fit_growth_missing_and_short(tmp_path):
    assert main(["fit-growth", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1
    cfg = _write(tmp_path, "c.json", SMALL)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "short")])
    assert main(["fit-growth", str(tmp_path / "short" / "manifest.csv"),
                 "--out", str(tmp_path)]) == 1


def test_spectrum_command(tmp_path):
    g = SpectralGrid(32, 32, 30.0, 30.0)
    x, _ = g.coordinates()
    write_snapshot(tmp_path / "u.zk2d", RealField2D(g, np.cos(2 * np.pi * 3 * x / 30.0)))
    assert main(["spectrum", str(tmp_path / "u.zk2d"), "--out", str(tmp_path), "--sharp"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "shell_spectrum.csv")))
    total = sum(float(r["energy"]) for r in rows)
    assert total == pytest.approx(30.0 * 30.0 / 2, rel=1e-12)
