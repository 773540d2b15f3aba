import json
import math
import warnings

import numpy as np
import pytest

from ril import mc_experiments as mc
from ril.mc_experiments import (
    ExperimentConfig, InvariantViolation, block_partition_study, estimate_moments, estimate_tail,
    lil_checkpoints, lil_track,
)
from ril.oracles import exact_EI, exact_EJ
from ril.theory_constants import lil_constant, rate_params_for


def small(**kw):
    base = dict(walk="simple", d=2, p=2, n_grid=(64,), replicates=400, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_zeroth_moment_scales_to_one():
    rep = estimate_moments(small(n_grid=(16, 64, 256), moments=(0, 1)))
    for c in rep.select("moment_scaled", m_or_lambda=0):
        assert c.estimate == 1.0 and c.stderr == 0.0


def test_mean_matches_exact_small():
    cfg = small(walk="lazy", eta=0.25, n_grid=(8,), replicates=20000, seed=3)
    rep = estimate_moments(cfg)
    j = rep.select("moment", m_or_lambda=1)[0]
    i = rep.select("I_moment", m_or_lambda=1)[0]
    assert abs(j.estimate - exact_EJ(cfg.dist(), 2, 8)) <= 3 * j.stderr
    assert abs(i.estimate - exact_EI(cfg.dist(), 2, 8)) <= 3 * i.stderr


def test_standard_error_scaling():
    se = [estimate_moments(small(replicates=r, seed=17)).select("moment", m_or_lambda=1)[0].stderr
          for r in (2000, 8000)]
    assert 2 / 1.2 <= se[0] / se[1] <= 2 * 1.2


def test_chunking_and_threads_do_not_change_results():
    a = estimate_moments(small(n_grid=(32, 128), moments=(1, 2), chunk=7, threads=3))
    b = estimate_moments(small(n_grid=(32, 128), moments=(1, 2), chunk=0, threads=1))
    assert a.to_csv() == b.to_csv()
    assert json.loads(a.to_json())["cells"] == json.loads(b.to_json())["cells"]


def test_invariant_violation_reports_seed(monkeypatch):
    monkeypatch.setattr(mc, "batch_I", lambda keys, packing, n: np.zeros(n, dtype=np.int64))
    with pytest.raises(InvariantViolation, match="seed 5"):
        estimate_moments(small())


def test_csv_and_json_layout(tmp_path):
    rep = estimate_moments(small(moments=(1,)))
    paths = rep.write(tmp_path)
    lines = paths["csv"].read_text().splitlines()
    assert lines[0] == ",".join(mc.CSV_COLUMNS)
    assert all(line.endswith(",") for line in lines[1:])      # walltime left blank
    doc = json.loads(paths["json"].read_text())
    assert doc["schema"] == 1 and doc["config"]["seed"] == 5
    assert len(doc["cells"]) == len(lines) - 1
    assert json.loads(paths["timing"].read_text())["walltime_s"] > 0


def test_bn_presets():
    cfg = small()
    assert cfg.b_n(10 ** 4) == pytest.approx(math.log(math.log(10 ** 4)))
    cfg = small(bn_rule="log^{2/3-eps}")
    assert cfg.b_n(10 ** 4) == pytest.approx(math.log(10 ** 4) ** (2 / 3 - 0.1))
    assert cfg.regime == "proven"
    with pytest.raises(ValueError):
        small(bn_rule="sqrt")


def test_explicit_bn_is_labelled():
    cfg = small(bn_rule=(2.0,), lambdas=(0.5,))
    with pytest.warns(UserWarning, match="outside proven regime"):
        rep = estimate_tail(cfg)
    assert rep.config.regime == "outside proven regime"
    assert json.loads(rep.to_json())["regime"] == "outside proven regime"


def test_tail_edge_cases():
    n = 200
    cfg = small(n_grid=(n,), lambdas=(1e-9, 1e6))
    rep = estimate_tail(cfg, rate=lambda lam: lam)
    low, high = rep.select("tail_prob")
    assert low.estimate == 1.0
    assert rep.select("tail_decay")[0].estimate == 0.0
    assert high.estimate == 0.0 and high.flag == "zero"
    assert math.isinf(rep.select("tail_decay")[1].estimate)
    assert [c.estimate for c in rep.select("md_rate")] == [1e-9, 1e6]


def test_tail_diagnostic_nondecreasing():
    cfg = small(d=3, n_grid=(2000,), bn_rule=(3.0,), lambdas=(0.05, 0.1, 0.2), replicates=1500)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diags = estimate_tail(cfg).select("tail_decay")
    for a, b in zip(diags, diags[1:]):
        assert b.estimate >= a.estimate - 3 * math.hypot(a.stderr, b.stderr)


def test_lil_checkpoints():
    assert lil_checkpoints(small(n_grid=(1000,))) == [16, 32, 64, 128, 256, 512, 1000]
    assert lil_checkpoints(small(n_grid=(50000,), checkpoints="kk")) == [27, 256, 3125, 46656, 50000]
    with pytest.raises(ValueError):
        lil_checkpoints(small(n_grid=(10,)))


def test_lil_running_max_monotone():
    cfg = ExperimentConfig(walk="simple", d=3, p=2, n_grid=(10 ** 5,), replicates=40, seed=9,
                           checkpoint_ratio=4.0)
    rep = lil_track(cfg, constant=lil_constant(rate_params_for(cfg.dist(), 2)))
    assert rep.extra["running_max_monotone"]
    med = [c.estimate for c in rep.select("lil_q50")]
    assert med == sorted(med)
    assert rep.select("lil_q50")[-1].n == 10 ** 5


# frozen pilot: scripts/pilot_lil_corridor.py
LIL_PILOT = dict(n=10 ** 6, replicates=200, seed=31337, checkpoint_ratio=4.0)


def test_lil_sanity_corridor_d3():
    cfg = ExperimentConfig(walk="simple", d=3, p=2, n_grid=(LIL_PILOT["n"],),
                           replicates=LIL_PILOT["replicates"], seed=LIL_PILOT["seed"],
                           checkpoint_ratio=LIL_PILOT["checkpoint_ratio"])
    const = lil_constant(rate_params_for(cfg.dist(), 2))
    med = lil_track(cfg, constant=const).select("lil_q50")[-1].estimate
    assert const / 100 < med < 5 * const, f"median running max {med:.4f} = {med / const:.2f} x constant"


def test_single_block_sum_is_zero():
    rep = block_partition_study(small(n_grid=(300,), bn_rule=(1.5,)))
    assert rep.select("cross_block_mean")[0].estimate == 0.0


def test_nearly_frozen_walk_block_sum():
    # a walk that never moves puts every block on one site, so the sum is C(a, 2);
    # with n = 40 about two thirds of the paths stay put
    n, a = 40, 4
    cfg = small(walk="lazy", eta=0.99, n_grid=(n,), bn_rule=(float(a),), replicates=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = block_partition_study(cfg)
    mean = rep.select("cross_block_mean")[0].estimate
    pairs = a * (a - 1) // 2
    assert 0.8 * pairs <= mean <= 1.2 * pairs
    thr = mc.cross_block_scale(2, n, cfg.eps)
    assert rep.select("cross_block_ratio")[0].estimate == pytest.approx(mean / thr)


def test_config_validation():
    with pytest.raises(ValueError):
        small(d=3, p=3)
    with pytest.raises(ValueError):
        small(replicates=1)
    with pytest.raises(ValueError):
        small(n_grid=(10, 20), bn_rule=(1.0, 2.0, 3.0))


def test_block_study_exceedance_pilot():
    # frozen pilot: scripts/pilot_block_study.py
    cfg = ExperimentConfig(walk="lazy", eta=0.5, d=2, p=2, n_grid=(10 ** 5,), bn_rule="loglog",
                           eps=0.5, replicates=10 ** 4, seed=4242)
    rep = block_partition_study(cfg)
    assert rep.select("cross_block_exceed")[0].estimate <= 1e-3
    assert rep.config.regime == "proven" and not rep.warnings
