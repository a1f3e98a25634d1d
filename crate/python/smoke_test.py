"""Smoke test for the `aga` extension module.

Build and install first, e.g. `pip install --no-build-isolation -e crates/python`.
"""

import math
import os
import tempfile

import aga

CONFIG = """
seed = 4
[generator]
horizon = 400
[features]
zscore_window = 40
[model]
states = 3
hidden = 8
heads = 2
lookback = 8
dilations = [1, 2]
wavelet_levels = 2
coarse_window = 8
coarse_stride = 4
flow_layers = 2
flow_hidden = 8
signal_window = 10
[train]
max_epochs = 2
"""


def main():
    ds = aga.Dataset.generate(CONFIG)
    assert len(ds) > 300, len(ds)
    assert ds.feature_names[2] == "ofi"
    assert len(ds.features[0]) == 7
    assert set(v for v in ds.labels if v is not None) <= {-1, 0, 1}
    again = aga.Dataset.generate(CONFIG)
    assert again.features == ds.features

    model = aga.Model(CONFIG, ds.feature_names)
    history = model.train(ds, CONFIG, seed=1)
    assert len(history) == 2 and all(math.isfinite(r["val_total"]) for r in history)

    out = model.infer(ds)
    steps = len(ds) - model.warmup
    assert out["start"] == model.warmup and len(out["viterbi"]) == steps
    for row in out["filtered"]:
        assert abs(sum(row) - 1.0) < 1e-9
    assert all(t >= 1.0 for t in out["tau"])

    report = model.evaluate(ds, CONFIG, latency_steps=100)
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["latency_p99_ms"] > 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.agah")
        model.save(path)
        back = aga.Model.load(path)
        assert back.to_bytes() == model.to_bytes()
        assert back.param_count == model.param_count
        csv = os.path.join(tmp, "ds.csv")
        ds.save_csv(csv)
        assert aga.Dataset.load(csv).mid == ds.mid

    log_emit = [[math.log(0.6), math.log(0.4)], [math.log(0.1), math.log(0.9)]]
    trans = [math.log(p) for p in (0.9, 0.1, 0.2, 0.8)]
    init = [math.log(0.5)] * 2
    ll, filtered = aga.hmm_forward(log_emit, [trans, trans], init)
    brute = 0.0
    for a in range(2):
        for b in range(2):
            p = [[0.9, 0.1], [0.2, 0.8]][a][b]
            brute += 0.5 * [0.6, 0.4][a] * p * [0.1, 0.9][b]
    assert abs(ll - math.log(brute)) < 1e-12
    assert aga.hmm_viterbi(log_emit, [trans, trans], init) == [1, 1]

    f1, mapping = aga.regime_f1([2, 2, 0, 0, 1], [0, 0, 1, 1, 2], 3)
    assert f1 == 1.0 and mapping == [1, 2, 0]
    assert aga.mcc([0, 1, 2, 0], [0, 1, 2, 0], 3) == 1.0
    assert aga.sharpe([1, 1, 1], [100.0, 101.0, 102.0], fee_bps=0.0) > 0.0
    print("smoke test passed")


if __name__ == "__main__":
    main()
