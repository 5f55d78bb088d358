"""Tests for wiring, the phase-1 loop, feature collection, checkpoints."""

import hashlib

import numpy as np
import numpy.testing as npt
import pytest

from echospike import (
    EsppConfig,
    EsppNetwork,
    LayerSpec,
    NetworkSpec,
    PairingPolicy,
    SpikeRaster,
    TrainingDivergedError,
    pair_stream,
    synth_generate,
    update_sparsity,
)
from tests.conftest import random_dataset


def small_cfg(**kw):
    base = dict(beta=0.9, c_pos=1.5, c_neg=-1.0, input_threshold=0.02,
                learning_rate=1e-3, init_gain=2.0)
    base.update(kw)
    return EsppConfig(**base)


def toy_net(sizes=(8, 8), channels=6, wiring="all", seed=0, **spec_kw):
    layers = [LayerSpec(s, config=small_cfg()) for s in sizes]
    return EsppNetwork(NetworkSpec(channels, layers, wiring), seed=seed, **spec_kw)


def toy_stream(ds, seed=1):
    policy = PairingPolicy(mode="balanced", p_fix=0.5, seed=seed)
    return lambda: pair_stream(ds, policy)


def weight_digest(net):
    h = hashlib.sha256()
    for w in net.weights():
        h.update(w.tobytes())
    return h.hexdigest()


class TestWiring:
    def test_feedforward_fan_in(self):
        spec = NetworkSpec(6, [LayerSpec(8), LayerSpec(4)], "all")
        assert spec.fan_in(0) == 6
        assert spec.fan_in(1) == 8
        assert spec.feature_size() == 6 + 8 + 4

    def test_recurrent_fan_in(self):
        spec = NetworkSpec(6, [LayerSpec(8), LayerSpec(4, recurrent=True)], "last")
        assert spec.fan_in(1) == 8 + 4
        assert spec.feature_size() == 4

    def test_skip_from_input(self):
        spec = NetworkSpec(6, [LayerSpec(8), LayerSpec(4, skip_sources=(0,))], "all")
        assert spec.fan_in(1) == 8 + 6

    def test_deep_transition_wiring(self):
        # last layer feeds the first with a one-step delay
        spec = NetworkSpec(6, [LayerSpec(8, skip_sources=(2,)), LayerSpec(4)], "all")
        assert spec.fan_in(0) == 6 + 4
        net = EsppNetwork(spec, seed=0)
        acts = net.forward_step(np.ones(6))
        assert [a.shape[0] for a in acts] == [8, 4]

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            NetworkSpec(0, [LayerSpec(4)])
        with pytest.raises(ValueError):
            NetworkSpec(6, [])
        with pytest.raises(ValueError):
            NetworkSpec(6, [LayerSpec(4)], "middle")
        with pytest.raises(ValueError):
            NetworkSpec(6, [LayerSpec(4, skip_sources=(3,))])

    def test_zero_weights_zero_output(self):
        net = toy_net()
        net.set_weights([np.zeros_like(w) for w in net.weights()])
        acts = net.forward_step(np.ones(6))
        for a in acts:
            npt.assert_array_equal(a, 0.0)

    def test_recurrence_reads_previous_step_only(self):
        layers = [LayerSpec(5, recurrent=True, config=small_cfg())]
        net = EsppNetwork(NetworkSpec(4, layers, "last"), seed=3)
        w = net.weights()[0]
        w[:, 4:] = 1e9  # recurrent block: huge, must not matter at t=0
        net.set_weights([w])
        first = net.forward_step(np.ones(4), prev_step_activities=[np.zeros(5)])

        w2 = net.weights()[0]
        w2[:, 4:] = 0.0
        net2 = EsppNetwork(NetworkSpec(4, layers, "last"), seed=3)
        net2.set_weights([w2])
        first2 = net2.forward_step(np.ones(4), prev_step_activities=[np.zeros(5)])
        npt.assert_array_equal(first[0], first2[0])

    def test_forward_step_validates_shapes(self):
        net = toy_net()
        with pytest.raises(ValueError):
            net.forward_step(np.ones(7))
        with pytest.raises(ValueError):
            net.forward_step(np.ones(6), prev_step_activities=[np.zeros(8)])


class TestPhase1:
    def test_zero_length_stream_keeps_weights(self):
        net = toy_net()
        before = weight_digest(net)
        snap = net.train_phase1(lambda: iter(()), epochs=3)
        assert weight_digest(net) == before
        assert snap.epoch == 3

    def test_first_sample_changes_nothing(self, rng):
        ds = random_dataset(rng, n_samples=1, channels=6, steps=5)
        net = toy_net()
        before = weight_digest(net)
        net.train_phase1(lambda: iter([(ds.samples[0], ds.samples[0].label, None)]))
        assert weight_digest(net) == before

    def test_second_identical_sample_only_potentiates(self, rng):
        spikes = (rng.random((10, 6)) < 0.5).astype(np.uint8)
        raster = SpikeRaster(spikes, 0)
        net = toy_net(sizes=(8,))
        w0 = net.weights()[0]
        net.train_phase1(lambda: iter([(raster, 0, None), (raster, 0, 1)]))
        dw = net.weights()[0] - w0
        assert dw.min() >= 0.0
        assert dw.max() > 0.0  # something actually moved

    def test_determinism_bitwise(self, rng):
        ds = random_dataset(rng, n_samples=12, channels=6, steps=5, n_classes=3)
        runs = []
        for _ in range(2):
            net = toy_net(seed=5)
            net.train_phase1(toy_stream(ds, seed=7), epochs=3)
            runs.append(weight_digest(net))
        assert runs[0] == runs[1]

    def test_locality_truncation_audit(self, rng):
        ds = random_dataset(rng, n_samples=10, channels=6, steps=5, n_classes=3)
        full = toy_net(sizes=(8, 8), seed=5)
        full.train_phase1(toy_stream(ds, seed=7), epochs=2)
        trunc = toy_net(sizes=(8,), seed=5)
        trunc.train_phase1(toy_stream(ds, seed=7), epochs=2)
        npt.assert_array_equal(full.weights()[0], trunc.weights()[0])

    def test_metrics_shape_and_sparsity(self, rng):
        ds = random_dataset(rng, n_samples=8, channels=6, steps=5, n_classes=2)
        net = toy_net()
        snap = net.train_phase1(toy_stream(ds), epochs=4)
        assert len(snap.metrics) == 4
        assert all(len(epoch) == 2 for epoch in snap.metrics)
        frac = update_sparsity(snap)
        assert frac.shape == (4, 2)
        assert np.all(frac >= 0.0) and np.all(frac <= 1.0)
        for epoch in snap.metrics:
            for m in epoch:
                assert 0.0 <= m["firing_rate"] <= 1.0

    def test_forced_stream_gates_every_step(self, rng):
        # zero weights keep the echo dead, so similarity stays 0 and the
        # fixation gate opens at every step once the input threshold is 0
        cfg = EsppConfig(input_threshold=0.0, c_pos=1.0, c_neg=-1.0,
                         learning_rate=1e-3)
        net = EsppNetwork(NetworkSpec(6, [LayerSpec(8, config=cfg)]), seed=0)
        net.set_weights([np.zeros_like(net.weights()[0])])
        ds = random_dataset(rng, n_samples=4, channels=6, steps=5, n_classes=1)
        stream = [(s, s.label, 1) for s in ds.samples]  # forced fixations
        snap = net.train_phase1(lambda: iter(stream), epochs=1)
        npt.assert_array_equal(update_sparsity(snap), [[1.0]])

    def test_first_sample_sparsity_zero(self, rng):
        ds = random_dataset(rng, n_samples=1, channels=6, steps=5)
        net = toy_net()
        snap = net.train_phase1(
            lambda: iter([(ds.samples[0], ds.samples[0].label, None)])
        )
        npt.assert_array_equal(update_sparsity(snap), [[0.0, 0.0]])

    def test_batched_run_is_finite_and_different(self, rng):
        ds = random_dataset(rng, n_samples=12, channels=6, steps=5, n_classes=3)
        net1 = toy_net(seed=5)
        net1.train_phase1(toy_stream(ds, seed=7), epochs=2, batch_size=1)
        net4 = toy_net(seed=5)
        net4.train_phase1(toy_stream(ds, seed=7), epochs=2, batch_size=4)
        for w in net4.weights():
            assert np.isfinite(w).all()
        assert weight_digest(net1) != weight_digest(net4)

    def test_nan_weight_aborts(self, rng):
        ds = random_dataset(rng, n_samples=2, channels=6, steps=3)
        net = toy_net()
        w = net.weights()
        w[1][0, 0] = np.nan
        net.set_weights(w)
        with pytest.raises(TrainingDivergedError, match="layer 2"):
            net.train_phase1(toy_stream(ds), epochs=1)

    def test_batch_size_validation(self):
        net = toy_net()
        with pytest.raises(ValueError):
            net.train_phase1(lambda: iter(()), epochs=1, batch_size=0)


class TestPhase2:
    def test_zero_raster_zero_features(self):
        net = toy_net(wiring="all")
        feats = net.collect_features(SpikeRaster(np.zeros((4, 6), dtype=np.uint8)))
        npt.assert_array_equal(feats, np.zeros(6 + 16))

    def test_feature_lengths_by_wiring(self, rng):
        ds = random_dataset(rng, channels=6)
        all_net = toy_net(wiring="all")
        last_net = toy_net(wiring="last")
        assert all_net.collect_features(ds.samples[0]).shape == (6 + 8 + 8,)
        assert last_net.collect_features(ds.samples[0]).shape == (8,)

    def test_features_deterministic_and_pure(self, rng):
        ds = random_dataset(rng, channels=6)
        net = toy_net()
        before = weight_digest(net)
        f1 = net.collect_features(ds.samples[0])
        f2 = net.collect_features(ds.samples[0])
        npt.assert_array_equal(f1, f2)
        assert weight_digest(net) == before

    def test_input_counts_prefix_in_all_wiring(self, rng):
        ds = random_dataset(rng, channels=6)
        net = toy_net(wiring="all")
        feats = net.collect_features(ds.samples[0])
        npt.assert_array_equal(feats[:6], ds.samples[0].spikes.sum(axis=0))

    def test_run_record_shape_matches_counts(self, rng):
        ds = random_dataset(rng, channels=6, steps=5)
        net = toy_net()
        recs = net.run_record(ds.samples[0])
        assert [r.shape for r in recs] == [(5, 8), (5, 8)]
        feats = net.collect_features(ds.samples[0])
        npt.assert_allclose(
            np.concatenate([r.sum(axis=0) for r in recs]), feats[6:], rtol=0, atol=0
        )


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        ds = random_dataset(rng, n_samples=8, channels=6, steps=4, n_classes=2)
        net = toy_net(seed=9)
        net.train_phase1(toy_stream(ds), epochs=2)
        stem = tmp_path / "ckpt"
        net.save_checkpoint(stem, run_config={"seed": 9}, rng_state=None)
        back, manifest = EsppNetwork.load_checkpoint(stem.with_suffix(".json"))
        assert manifest["epochs_trained"] == 2
        assert manifest["run_config"] == {"seed": 9}
        assert back.spec.to_dict() == net.spec.to_dict()
        for w1, w2 in zip(net.weights(), back.weights()):
            npt.assert_array_equal(w1.astype("<f4").astype(np.float64), w2)

    def test_identical_runs_identical_files(self, tmp_path, rng):
        ds = random_dataset(rng, n_samples=10, channels=6, steps=4, n_classes=3)
        blobs = []
        for name in ("a", "b"):
            net = toy_net(seed=4)
            net.train_phase1(toy_stream(ds, seed=6), epochs=2)
            net.save_checkpoint(tmp_path / name, run_config={"x": 1})
            blobs.append((tmp_path / f"{name}.bin").read_bytes())
        assert blobs[0] == blobs[1]

    def test_rejects_wrong_manifest(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "other", "blob": "x.bin", "matrices": []}')
        (tmp_path / "x.bin").write_bytes(b"")
        from echospike import CheckpointError

        with pytest.raises(CheckpointError):
            EsppNetwork.load_checkpoint(p)


class TestEndToEndSanity:
    def test_training_improves_linear_separability(self):
        ds = synth_generate(3, 12, 30, 0.25, 0.06, 120, seed=21)
        train, test = ds.split(30)
        from echospike import evaluate, lsq_fit

        def accuracy(net):
            feats = np.stack([net.collect_features(s) for s in train.samples])
            head = lsq_fit(feats, train.labels(), train.n_classes)
            return evaluate(head, net, test)["accuracy"]

        layers = [LayerSpec(16, config=small_cfg()) for _ in range(2)]
        trained = EsppNetwork(NetworkSpec(12, layers, "all"), seed=2)
        policy = PairingPolicy(mode="balanced", p_fix=0.5, seed=3)
        trained.train_phase1(lambda: pair_stream(train, policy), epochs=8)
        frozen = EsppNetwork(NetworkSpec(12, layers, "all"), seed=2)
        assert accuracy(trained) >= accuracy(frozen) - 0.05  # never materially worse
