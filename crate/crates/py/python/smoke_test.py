"""Smoke test for the ldpstream_py extension."""

import math

import ldpstream_py as lp


def main():
    p = lp.sw_params(1.0)
    assert abs(p.p * 2 * p.b + p.q - 1) < 1e-12
    assert abs(p.p / p.q - math.e) < 1e-9, p

    lo, hi, t = lp.clip_bounds(1.0)
    assert lo <= hi

    xs = [(1 + math.sin(0.1 * t)) / 2 for t in range(200)]
    for algo in ["sw", "ipp", "app", "capp", "ba-sw"]:
        pert = lp.Perturber(algo, 1.0, 10, seed=3)
        out = pert.run(xs)
        assert len(out) == len(xs)

    est = lp.estimate("capp", xs, 1.0, 10, seed=1)
    assert len(est) == len(xs)
    assert lp.estimate("capp", xs, 1.0, 10, seed=1) == est

    ledger = lp.BudgetLedger(3, 1.0)
    ledger.record(0, 0.5)
    ledger.record(1, 0.5)
    try:
        ledger.record(2, 0.5)
        ledger.assert_w_event()
    except lp.BudgetViolationError:
        pass
    else:
        raise AssertionError("ledger accepted an over-budget window")

    n_s = lp.select_ns(30, 1.0, 10)
    assert 2 <= n_s <= 30
    assert lp.var_of_sample_variance(3, 1.0) > 0

    assert lp.sma([0.0, 1.0, 2.0], 3)[1] == 1.0
    assert lp.mse([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert lp.cosine_distance([1.0, 2.0], [2.0, 4.0]) < 1e-12
    assert lp.wasserstein([0.0, 1.0], [0.0, 1.0]) == 0.0

    csv = lp.run_experiment(
        "dataset = synth:sin\nalgorithms = sw,capp\nepsilons = 1\ntrials = 3\nsubsequences = 2\n"
    )
    assert csv.splitlines()[0] == "dataset,algo,eps,w,q,trial_count,metric,mean,stderr"

    try:
        lp.sw_params(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative epsilon accepted")

    print("ok")


if __name__ == "__main__":
    main()
