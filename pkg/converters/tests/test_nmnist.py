"""N-MNIST conversion tests on synthetic fixtures (real data env-gated)."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from echospike import load
from espk_converters import NMNIST_CHANNELS, convert_nmnist, read_aer_events
from espk_converters.nmnist import SENSOR_SIDE, MalformedAerError

from tests.conftest import encode_aer


class TestAerDecoding:
    def test_decodes_fields(self, tmp_path):
        f = tmp_path / "x.bin"
        f.write_bytes(encode_aer([(5, 7, 1, 123456)]))
        times, channels, skipped = read_aer_events(f)
        assert skipped == 0
        assert times.tolist() == [123456.0]
        assert channels.tolist() == [1 * 34 * 34 + 7 * 34 + 5]

    def test_channel_range_bounds(self, tmp_path):
        f = tmp_path / "x.bin"
        f.write_bytes(encode_aer([(0, 0, 0, 0), (33, 33, 1, 10)]))
        _, channels, _ = read_aer_events(f)
        assert channels.min() == 0
        assert channels.max() == NMNIST_CHANNELS - 1 == 2311

    def test_trailing_bytes_abort_or_skip(self, tmp_path):
        f = tmp_path / "x.bin"
        f.write_bytes(encode_aer([(1, 1, 0, 10)]) + b"\x01\x02")
        with pytest.raises(MalformedAerError, match="trailing"):
            read_aer_events(f, on_error="abort")
        times, _, skipped = read_aer_events(f, on_error="skip")
        assert times.shape == (1,)
        assert skipped == 1

    def test_bad_address_abort_or_skip(self, tmp_path):
        f = tmp_path / "x.bin"
        f.write_bytes(encode_aer([(99, 1, 0, 10), (1, 1, 0, 20)]))
        with pytest.raises(MalformedAerError, match="outside"):
            read_aer_events(f, on_error="abort")
        times, channels, skipped = read_aer_events(f, on_error="skip")
        assert skipped == 1
        assert channels.tolist() == [1 * 34 + 1]


class TestConvertNmnist:
    def test_fixture_split(self, nmnist_dir, tmp_path):
        out = tmp_path / "out.espk"
        manifest = convert_nmnist(nmnist_dir, out, steps=10)
        ds = load(out)
        assert ds.channels == NMNIST_CHANNELS
        assert ds.steps == 10
        assert ds.n_classes == 10
        assert [s.label for s in ds.samples] == [0, 0, 3]
        # sample 1: early ON event in bin 0, late OFF event in the last bin
        s = ds.samples[0]
        assert s.spikes[0, 0 * 34 * 34 + 2 * 34 + 1] == 1
        assert s.spikes[9, 1 * 34 * 34 + 0 * 34 + 0] == 1
        assert s.n_events == 2
        assert ds.samples[1].n_events == 0  # empty recording
        assert manifest.per_sample_event_counts == [2, 0, 1]
        assert manifest.total_events == 3

    def test_loader_counts_match_manifest(self, nmnist_dir, tmp_path):
        out = tmp_path / "out.espk"
        manifest = convert_nmnist(nmnist_dir, out)
        ds = load(out)
        assert [s.n_events for s in ds.samples] == manifest.per_sample_event_counts

    def test_rerun_is_checksum_stable(self, nmnist_dir, tmp_path):
        m1 = convert_nmnist(nmnist_dir, tmp_path / "a.espk")
        m2 = convert_nmnist(nmnist_dir, tmp_path / "b.espk")
        assert m1.sha256 == m2.sha256
        assert (tmp_path / "a.espk").read_bytes() == (tmp_path / "b.espk").read_bytes()

    def test_manifest_written(self, nmnist_dir, tmp_path):
        out = tmp_path / "out.espk"
        convert_nmnist(nmnist_dir, out)
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert manifest["source"] == "n-mnist"
        assert manifest["channels"] == 2 * SENSOR_SIDE * SENSOR_SIDE
        assert manifest["n_samples"] == 3

    def test_empty_directory_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            convert_nmnist(tmp_path, tmp_path / "out.espk")


@pytest.mark.skipif(not os.environ.get("ESPK_NMNIST_DIR"),
                    reason="set ESPK_NMNIST_DIR to a real N-MNIST split")
class TestRealNmnist:
    def test_full_split_counts(self, tmp_path):
        out = tmp_path / "nmnist.espk"
        manifest = convert_nmnist(os.environ["ESPK_NMNIST_DIR"], out)
        ds = load(out)
        assert ds.channels == 2311 + 1
        assert len(ds) == manifest.n_samples
        assert manifest.n_samples in (60000, 10000)  # train or test split
        assert np.array_equal(
            np.array([s.n_events for s in ds.samples]),
            np.array(manifest.per_sample_event_counts),
        )
