"""Smoke test for the spiking_replay extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""

import json
import os
import tempfile

import spiking_replay as sr


def main():
    x = sr.SpikeTensor([[1, 0, 0, 1], [0, 1, 0, 0], [1, 1, 1, 1]])
    assert (x.timesteps, x.neurons, x.popcount()) == (3, 4, 7)
    assert x.get(2, 3) and not x.get(0, 1)
    assert x.to_list()[1] == [False, True, False, False]

    # 2560 uncompressed replays of 700 x 100 spikes take 22.4 MB.
    assert sr.Codec.chunk(1).footprint_bytes(2560, 700, 100) == 22_400_000
    assert sr.Codec.chunk(10).footprint_bytes(2560, 50, 100) == 160_000
    assert sr.Codec.aggregate().bits_per_sequence(100) == 7
    assert sr.count_width(100) == 7
    assert sr.compress_chunk_threshold([1, 0, 0, 0, 1, 1], 2, 2) == [False, False, True]
    assert sr.decompress_chunk_threshold([True, False], 3) == [True, False, False, False, False, False]
    assert sr.surrogate_grad(0.0) == 1.0
    assert abs(sr.forgetting(0.97, 0.948) - 0.022) < 1e-12

    data = sr.synth(classes=3, scenarios=1, samples=20, timesteps=30, neurons=16, seed=1)
    assert len(data) == 60 and data.class_histogram() == [20, 20, 20]
    tensor, label, scenario = data[0]
    assert (label, scenario) == (0, 0)
    roundtrip = sr.Codec.hybrid(5).roundtrip(tensor)
    assert roundtrip.counts_per_neuron() == tensor.counts_per_neuron()

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.spks")
        data.save(path)
        again = sr.SpikeSet.load(path)
        assert again.to_bytes() == data.to_bytes()
        try:
            sr.SpikeSet.from_bytes(b"nope")
        except ValueError:
            pass
        else:
            raise AssertionError("corrupt data accepted")

        train, test = data.split(0.25, 1)
        net = sr.Network([16, 12, 3], split_index=1, seed=2)
        frozen = net.fingerprint(1)
        history = net.fit(train, epochs=5, eta=1e-3, batch_size=8, seed=2)
        assert len(history) == 5
        acc = net.evaluate(test)
        assert 0.0 <= acc <= 1.0
        outs = net.forward(tensor)
        assert [o.neurons for o in outs] == [12, 3]

        net.reinit_class(2, seed=3)
        ck = os.path.join(tmp, "ck")
        net.save(ck, seed=2)
        loaded = sr.Network.load(ck)
        assert loaded.fingerprint() == net.fingerprint() != frozen

    cfg = {
        "seed": 4,
        "dataset": {"train": "unused"},
        "network": {"sizes": [16, 12, 8, 3]},
        "pretrain": {"epochs": 2, "batch_size": 8},
        "continual": {"epochs": 2, "batch_size": 8},
        "scenario": {"kind": "class_incremental", "schedule": [2], "layer_index": 1, "replay_count": 10},
    }
    report = json.loads(sr.run_protocol(json.dumps(cfg), train, test))
    assert len(report["steps"]) == 1 and len(report["rows"]) == 3

    print(f"spiking_replay {sr.__version__}: smoke test passed (test accuracy {acc:.2f})")


if __name__ == "__main__":
    main()
