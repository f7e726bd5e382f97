import json
import math

import numpy as np
import pytest

from ldpfreq.core import InvariantError
from ldpfreq.harness import (
    CSV_HEADER,
    ExperimentConfig,
    aggregate,
    default_epsilons,
    ingest_real,
    results_csv,
    run_real,
    run_synthetic,
    trial_seed,
    write_results,
)


def small_config(**kw):
    base = dict(mechanism="rr", a=3, epsilons=[0.5, 2.0], n=200, trials=6, seed=4)
    base.update(kw)
    return ExperimentConfig(**base)


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.trials == 100
    np.testing.assert_allclose(cfg.epsilons, np.arange(1, 11) * 0.2)
    assert default_epsilons()[0] == pytest.approx(0.2)


@pytest.mark.parametrize("bad", [{"trials": 0}, {"epsilons": [0.5, 0.0]}, {"epsilons": []},
                                 {"estimators": ["nope"]}, {"mechanism": "xx"}])
def test_config_invariants(bad):
    with pytest.raises(InvariantError):
        small_config(**bad)


def test_config_rejects_unknown_keys():
    with pytest.raises(InvariantError):
        ExperimentConfig.from_dict({"a": 2, "trails": 5})


def test_config_round_trip(tmp_path):
    cfg = small_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(path) == cfg


def test_aggregates_recompute_from_trials():
    cfg = small_config()
    agg, trials = run_synthetic(cfg, return_trials=True)
    assert len(agg) == 2 * 3 * 2  # epsilons x estimators x targets
    for rec in agg:
        vals = [getattr(t, "err_" + rec.target) for t in trials
                if t.epsilon == rec.epsilon and t.estimator == rec.estimator and not t.failed]
        assert rec.trials == len(vals) == cfg.trials
        assert rec.mean_mse == pytest.approx(np.mean(vals), rel=1e-12)
        assert rec.stderr == pytest.approx(np.std(vals, ddof=1) / math.sqrt(len(vals)), rel=1e-9)


def test_run_twice_identical():
    cfg = small_config(trials=1)
    assert results_csv(run_synthetic(cfg)) == results_csv(run_synthetic(cfg))


def test_thread_count_does_not_change_results():
    one = results_csv(run_synthetic(small_config(threads=1)))
    three = results_csv(run_synthetic(small_config(threads=3)))
    assert one == three


def test_trial_seed_is_pure():
    assert trial_seed(1, 2, 3) == trial_seed(1, 2, 3)
    assert trial_seed(1, 2, 3) != trial_seed(1, 3, 2)


def test_different_seed_changes_results():
    assert results_csv(run_synthetic(small_config(seed=1))) != results_csv(run_synthetic(small_config(seed=2)))


def test_ue_sweep_runs():
    cfg = small_config(mechanism="ue", a=4, estimators=["fo", "normsub", "mle"], trials=3)
    agg = run_synthetic(cfg)
    assert all(r.excluded == 0 and np.isfinite(r.mean_mse) for r in agg)


def test_doubling_n_halves_fo_error():
    def fo_freq(n):
        cfg = ExperimentConfig(mechanism="rr", a=2, epsilons=[1.0], n=n, trials=4000,
                               estimators=["fo"], seed=11, target="freq")
        (rec,) = run_synthetic(cfg)
        return rec.mean_mse

    ratio = fo_freq(1000) / fo_freq(2000)
    assert 2 * 0.9 <= ratio <= 2 * 1.1


def test_mle_not_worse_than_fo_at_n_near_10a():
    cfg = ExperimentConfig(mechanism="rr", a=16, epsilons=[0.5], n=160, trials=100,
                           estimators=["fo", "mle"], seed=3, target="distr")
    by = {r.estimator: r for r in run_synthetic(cfg)}
    assert by["mle"].mean_mse <= by["fo"].mean_mse


def test_results_csv_header():
    text = results_csv(run_synthetic(small_config(trials=2)))
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert CSV_HEADER == ("epsilon", "estimator", "target", "mean_mse", "stderr", "trials", "excluded")


def test_write_results(tmp_path):
    cfg = small_config(trials=2)
    path = write_results(tmp_path, run_synthetic(cfg), cfg, 0.5)
    manifest = json.loads((tmp_path / "sweep_manifest.json").read_text())
    assert path.name == "sweep.csv"
    assert set(manifest) >= {"config", "seed", "versions", "wall_time_seconds", "results"}


def test_failed_trials_are_excluded():
    from ldpfreq.harness import TrialRecord

    recs = [
        TrialRecord(1.0, 0, "fo", (0, 0, 0), 0.1, 0.2),
        TrialRecord(1.0, 1, "fo", (0, 0, 1), None, math.nan, failed=True),
        TrialRecord(1.0, 2, "fo", (0, 0, 2), 0.3, 0.4),
    ]
    (distr, freq) = aggregate(recs, ["fo"], [1.0], "both")
    assert distr.trials == 2 and distr.excluded == 1
    assert distr.mean_mse == pytest.approx(0.2)


def test_ingest_categories(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("v\nA\nB\nA\n")
    res = ingest_real(p, "v")
    assert res.tally.counts.tolist() == [2, 1]
    assert res.mapping == {"A": 0, "B": 1}


def test_ingest_bins_and_invalid(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,dist\n1,0.5\n2,1.5\n3,1.6\n4,3.9\n5,abc\n")
    res = ingest_real(p, "dist", bins=(4, 0.0, 4.0))
    assert res.tally.counts.tolist() == [1, 2, 0, 1]
    assert res.invalid == 1 and res.valid == 4


def test_ingest_errors(tmp_path):
    with pytest.raises(InvariantError):
        ingest_real(tmp_path / "missing.csv", 0)
    p = tmp_path / "empty.csv"
    p.write_text("v\n")
    with pytest.raises(InvariantError):
        ingest_real(p, "v")


def test_run_real_near_noiseless():
    T = np.array([300, 200, 500])
    cfg = ExperimentConfig(mechanism="rr", a=3, epsilons=[20.0], n=1, trials=5,
                           estimators=["fo"], seed=0, target="freq")
    (rec,) = run_real(T, cfg)
    assert rec.mean_mse < 10 / T.sum()


def test_run_real_mle_beats_fo():
    rng = np.random.default_rng(0)
    T = np.bincount(rng.zipf(1.6, 400) % 10, minlength=10)
    cfg = ExperimentConfig(mechanism="rr", a=10, epsilons=[0.5, 1.0, 2.0], n=1, trials=40,
                           estimators=["fo", "mle"], seed=1, target="freq")
    agg = run_real(T, cfg)
    for eps in cfg.epsilons:
        by = {r.estimator: r.mean_mse for r in agg if r.epsilon == eps}
        assert by["mle"] <= by["fo"]


@pytest.mark.slow
def test_fo_frequency_error_matches_closed_form_large_sample():
    cfg = ExperimentConfig(mechanism="rr", a=2, epsilons=[1.0], n=10**4, trials=30000,
                           estimators=["fo"], seed=123456, target="freq")
    (rec,) = run_synthetic(cfg)
    want = 2 * math.e / (1e4 * (math.e - 1) ** 2)
    assert abs(rec.mean_mse - want) <= 3 * rec.stderr
    assert rec.mean_mse / want == pytest.approx(1.0, abs=0.03)
