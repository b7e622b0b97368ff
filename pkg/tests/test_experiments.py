import json

import numpy as np
import pytest
import yaml

from mfmoe import qsim
from mfmoe.experiments import (ConfigError, SweepConfig, alpha_d, build_problem, fit_rate,
                               read_results, run_sweep, simulate, verify_bounds)


def tiny(tmp_path, **over):
    raw = {
        "seed": 3, "d": 6, "mode": "rate-fit",
        "expert": {"kind": "fourier", "features": 4},
        "dataset": {"n": 4, "labels": "uniform", "A": 1.0},
        "dynamics": {"T": 0.1, "h": 0.01, "record_every": 5},
        "sweep": {"N": [4, 8, 16], "M": 128, "seeds": 3},
        "output": {"dir": str(tmp_path / "out")},
    }
    for k, v in over.items():
        raw[k] = v
    return raw


def synthetic_table(means, Ns, t=1.0):
    return [{"N": n, "seed": s, "t": t, "w2_sq": m} for n, m in zip(Ns, means) for s in range(3)]


def test_alpha_d_examples():
    assert alpha_d(1, 3) == 2.0
    assert alpha_d(64, 6) == pytest.approx(0.375, abs=1e-15)
    assert alpha_d(16, 4) == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(alpha_d(np.array([1, 64]), 6), [2.0, 0.375])
    with pytest.raises(ValueError):
        alpha_d(0, 6)


def test_fit_exact_table():
    Ns = [8, 16, 32, 64]
    fit = fit_rate(synthetic_table([3 * alpha_d(n, 6) for n in Ns], Ns), 6)
    assert fit.c1 == pytest.approx(3.0, rel=1e-12)
    assert fit.residual_rms == pytest.approx(0.0, abs=1e-12)
    assert fit.consistent and fit.envelope_holds
    assert fit.c1_envelope == pytest.approx(3.0, rel=1e-12)


def test_fit_flat_table_flagged():
    Ns = [8, 16, 32, 64]
    fit = fit_rate(synthetic_table([1.0] * 4, Ns), 6)
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert not fit.consistent
    assert fit.as_dict()["flag"] == "rate inconsistent"


def test_fit_preconditions():
    with pytest.raises(ValueError, match="at least 3"):
        fit_rate(synthetic_table([1.0, 0.5], [8, 16]), 6)
    with pytest.raises(ValueError, match="d > 4"):
        fit_rate(synthetic_table([1.0, 0.5, 0.2], [8, 16, 32]), 4)


def test_fit_uses_last_checkpoint_and_reports_stderr():
    rows = synthetic_table([9.0, 9.0, 9.0], [8, 16, 32], t=0.0)
    rows += [{"N": n, "seed": s, "t": 1.0, "w2_sq": alpha_d(n, 6) * (1 + 0.1 * s)}
             for n in [8, 16, 32] for s in range(3)]
    fit = fit_rate(rows, 6)
    assert fit.t == 1.0
    assert fit.c1 == pytest.approx(1.1, rel=1e-12)
    assert all(se > 0 for se in fit.stderr)
    assert fit.coverage >= 0.9


def test_config_round_trip_and_validation(tmp_path):
    cfg = SweepConfig.from_dict(tiny(tmp_path))
    assert cfg.seeds == [0, 1, 2]
    assert SweepConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(tiny(tmp_path)))
    assert SweepConfig.load(p).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.update(colour=1), "colour"),
    (lambda r: r["sweep"].update(extra=1), "sweep.extra"),
    (lambda r: r["sweep"].update(N=[]), "sweep.N"),
    (lambda r: r["dynamics"].update(h=0.0), "step size must be positive"),
    (lambda r: r.update(d=4), "d"),
    (lambda r: r["sweep"].update(M=100), "sweep.M"),
    (lambda r: r["expert"].update(kind="tree"), "expert.kind"),
    (lambda r: r["dataset"].update(labels="noise"), "dataset.labels"),
    (lambda r: r.update(mode="train"), "mode"),
])
def test_config_errors_name_the_field(tmp_path, mutate, field):
    raw = tiny(tmp_path)
    mutate(raw)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        SweepConfig.from_dict(raw)


def test_simulate_mode_allows_small_d(tmp_path, caplog):
    raw = tiny(tmp_path, d=2, mode="simulate")
    cfg = SweepConfig.from_dict(raw)
    assert "d=2" in caplog.text
    summary = simulate(cfg)
    assert len(summary["runs"]) == 9
    assert (tmp_path / "out" / "summary.json").exists()


def test_quantum_config_needs_matching_depth(tmp_path):
    circ = qsim.CircuitSpec.from_family(2, qsim.default_generators(2, 5), features=2).to_config()
    with pytest.raises(ConfigError, match="depth"):
        SweepConfig.from_dict(tiny(tmp_path, expert={"kind": "quantum", "circuit": circ}))


def test_sweep_outputs(tmp_path):
    cfg = SweepConfig.from_dict(tiny(tmp_path))
    res = run_sweep(cfg)
    out = tmp_path / "out"
    rows = read_results(out / "results.csv")
    assert len(rows) == 3 * 3 * 3
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "N,M,seed,t,w2_sq,pathwise,pointwise,loss_interacting,loss_reference"
    assert (out / "runs.csv").read_text().splitlines()[0] == "N,M,seed,pathwise,pointwise,w2_sq_final,runtime_ms"
    fit = json.loads((out / "fit.json").read_text())
    assert {"c1", "slope", "intercept", "stderr"} <= set(fit)
    for r in rows:
        for k in ("w2_sq", "pathwise", "pointwise", "loss_interacting", "loss_reference"):
            assert np.isfinite(r[k]) and r[k] >= 0
        if r["t"] == 0:
            assert r["pathwise"] == 0 and r["pointwise"] == 0
    for N in (4, 8, 16):
        fin = [r for r in res.final_rows() if r["N"] == N]
        assert fin[0]["pointwise"] <= np.mean([r["pathwise"] for r in fin]) + 1e-15


def test_sweep_with_reference_equal_to_N(tmp_path):
    raw = tiny(tmp_path, mode="simulate")
    raw["sweep"] = {"N": [8], "M": 8, "seeds": [5]}
    res = run_sweep(SweepConfig.from_dict(raw), write=False)
    assert all(r["w2_sq"] == 0.0 and r["pathwise"] == 0.0 for r in res.rows)


def test_sweep_is_deterministic(tmp_path):
    a = run_sweep(SweepConfig.from_dict(tiny(tmp_path)), write=False)
    b = run_sweep(SweepConfig.from_dict(tiny(tmp_path)), write=False)
    assert a.rows == b.rows


def test_initial_w2_follows_sampling_rate(tmp_path):
    raw = tiny(tmp_path)
    raw["sweep"] = {"N": [8, 32, 128], "M": 1024, "seeds": 4}
    raw["dynamics"] = {"T": 0.01, "h": 0.01, "record_every": 1}
    res = run_sweep(SweepConfig.from_dict(raw), write=False)
    m0 = res.seed_means(t=0.0)
    assert m0[8] > m0[32] > m0[128]
    fit = fit_rate([r for r in res.rows if r["t"] == 0.0], 6)
    assert fit.consistent


def test_verify_bounds_reports(tmp_path):
    cfg = SweepConfig.from_dict(tiny(tmp_path))
    rep = verify_bounds(cfg, trials=200)
    assert rep["pass"]
    assert json.loads((tmp_path / "out" / "bounds_report.json").read_text())["pass"]
    circ = qsim.CircuitSpec.from_family(3, qsim.default_generators(3, 6), features=2).to_config()
    qcfg = SweepConfig.from_dict(tiny(tmp_path, expert={"kind": "quantum", "circuit": circ},
                                      dataset={"n": 4, "labels": "uniform", "A": 1.0}))
    assert verify_bounds(qcfg, trials=100, write=False)["pass"]


def test_verify_bounds_catches_misdeclared_alpha(tmp_path):
    cfg = SweepConfig.from_dict(tiny(tmp_path, expert={"kind": "fourier", "features": 4, "alpha": 0.5}))
    rep = verify_bounds(cfg, trials=200, write=False)
    assert not rep["pass"] and not rep["bounds"]["grad"]["pass"]
    assert rep["witnesses"] and "theta" in rep["witnesses"][0]
    with pytest.raises(ValueError):
        verify_bounds(cfg, trials=0)


def test_problem_is_fixed_by_seed(tmp_path):
    m1, d1 = build_problem(SweepConfig.from_dict(tiny(tmp_path)))
    m2, d2 = build_problem(SweepConfig.from_dict(tiny(tmp_path)))
    np.testing.assert_array_equal(m1.projection, m2.projection)
    np.testing.assert_array_equal(d1.labels, d2.labels)
