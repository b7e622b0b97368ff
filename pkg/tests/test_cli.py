import math

import numpy as np
import pytest
import yaml

from mfmoe.cli import main, render_rate_svg
from mfmoe.experiments import alpha_d
from mfmoe.torus import torus_l1_distance
from mfmoe.transport import w2_squared_bruteforce


@pytest.fixture
def config(tmp_path):
    raw = {
        "seed": 1, "d": 6, "mode": "rate-fit",
        "expert": {"kind": "fourier", "features": 4},
        "dataset": {"n": 4, "labels": "uniform", "A": 1.0},
        "dynamics": {"T": 0.05, "h": 0.01, "record_every": 5},
        "sweep": {"N": [4, 8, 16], "M": 128, "seeds": 2},
        "output": {"dir": str(tmp_path / "out")},
    }
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def write_atoms(path, atoms, header=False):
    lines = [",".join(f"x{k}" for k in range(atoms.shape[1]))] if header else []
    lines += [",".join(repr(float(v)) for v in row) for row in atoms]
    path.write_text("\n".join(lines) + "\n")


def test_simulate(config, tmp_path, capsys):
    assert main(["simulate", "--config", str(config)]) == 0
    out = tmp_path / "out"
    assert (out / "summary.json").exists() and (out / "trajectory_N4_seed0.jsonl").exists()
    assert capsys.readouterr().out == ""


def test_simulate_errors(config, tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
    raw = yaml.safe_load(config.read_text())
    raw["dynamics"]["h"] = 0
    config.write_text(yaml.safe_dump(raw))
    assert main(["simulate", "--config", str(config)]) == 2
    assert "step size must be positive" in capsys.readouterr().err


def test_exit_code_for_blow_up(config, tmp_path, monkeypatch):
    from mfmoe import experiments
    from mfmoe.dynamics import DynamicsBlowUp

    def boom(*a, **k):
        raise DynamicsBlowUp("dynamics blow-up")
    monkeypatch.setattr(experiments, "integrate", boom)
    assert main(["simulate", "--config", str(config)]) == 3


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["sweep"]) == 2


def test_sweep_fit_plot_idempotent(config, tmp_path):
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(config)]) == 0
    first = (out / "results.csv").read_bytes()
    assert main(["sweep", "--config", str(config), "--log-level", "error"]) == 0
    assert (out / "results.csv").read_bytes() == first
    assert main(["fit-rate", str(out / "results.csv"), "--config", str(config), "--out", str(out)]) == 0
    assert (out / "fit.json").exists()
    assert main(["plot", str(out / "results.csv"), "--d", "6", "--out", str(out)]) == 0
    svg = (out / "w2_vs_N.svg").read_bytes()
    assert main(["plot", str(out / "results.csv"), "--d", "6", "--out", str(out)]) == 0
    assert (out / "w2_vs_N.svg").read_bytes() == svg


def test_global_flags_override(config, tmp_path):
    other = tmp_path / "elsewhere"
    assert main(["--seed", "9", "sweep", "--config", str(config), "--out", str(other)]) == 0
    assert (other / "results.csv").exists()
    assert not (tmp_path / "out" / "results.csv").exists()


def test_verify_bounds(config, tmp_path):
    assert main(["verify-bounds", "--config", str(config), "--trials", "50"]) == 0
    assert (tmp_path / "out" / "bounds_report.json").exists()
    assert main(["verify-bounds", "--config", str(config), "--trials", "0"]) == 2


def test_wasserstein_identical_and_single(tmp_path, capsys, gen):
    a = gen.uniform(0, 6, (5, 3))
    write_atoms(tmp_path / "a.csv", a)
    assert main(["wasserstein", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == 0
    assert [float(v) for v in capsys.readouterr().out.split()] == [0.0, 0.0]
    x, y = gen.uniform(0, 6, (1, 3)), gen.uniform(0, 6, (1, 3))
    write_atoms(tmp_path / "x.csv", x, header=True)
    write_atoms(tmp_path / "y.csv", y)
    assert main(["wasserstein", str(tmp_path / "x.csv"), str(tmp_path / "y.csv")]) == 0
    w, w_sq = (float(v) for v in capsys.readouterr().out.split())
    dist = float(torus_l1_distance(x[0], y[0]))
    assert w == pytest.approx(dist, abs=1e-12) and w_sq == pytest.approx(dist**2, abs=1e-12)


def test_wasserstein_bruteforce_and_errors(tmp_path, capsys, gen):
    a, b = gen.uniform(0, 6, (5, 2)), gen.uniform(0, 6, (5, 2))
    write_atoms(tmp_path / "a.csv", a)
    write_atoms(tmp_path / "b.csv", b)
    assert main(["wasserstein", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 0
    w, w_sq = (float(v) for v in capsys.readouterr().out.split())
    oracle = w2_squared_bruteforce(a, b)
    assert w_sq == pytest.approx(oracle, abs=1e-12) and w == pytest.approx(math.sqrt(oracle), abs=1e-12)
    write_atoms(tmp_path / "c.csv", gen.uniform(0, 6, (5, 3)))
    assert main(["wasserstein", str(tmp_path / "a.csv"), str(tmp_path / "c.csv")]) == 2
    assert main(["wasserstein", str(tmp_path / "a.csv"), str(tmp_path / "nope.csv")]) == 2


def test_plot_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["plot", str(empty), "--d", "6", "--out", str(tmp_path)]) == 2
    header_only = tmp_path / "h.csv"
    header_only.write_text("N,M,seed,t,w2_sq\n")
    assert main(["plot", str(header_only), "--d", "6", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["plot", str(bad), "--d", "6", "--out", str(tmp_path)]) == 2


def test_svg_overlay_passes_through_exact_points():
    Ns = [8, 16, 32, 64]
    rows = [{"N": n, "seed": 0, "t": 1.0, "w2_sq": 2.0 * alpha_d(n, 6)} for n in Ns]
    svg = render_rate_svg(rows, 6)
    lines = [ln for ln in svg.splitlines() if ln.startswith("<polyline")]
    pts = [ln.split('points="')[1].split('"')[0] for ln in lines]
    assert pts[0] == pts[1]
    assert render_rate_svg(rows, 6) == svg
