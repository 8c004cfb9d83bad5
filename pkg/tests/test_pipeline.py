"""Tests for graph assembly, weight loading and the forward pass."""

import time

import numpy as np
import pytest

from rtfskit import pipeline
from rtfskit.errors import FormatError, NumericalError, ShapeError, WeightError
from rtfskit.fingerprint import array_fingerprint
from rtfskit.ledger import visual_frames
from rtfskit.models import ModelConfig, Waveform
from rtfskit.rtfs_block import rtfs_forward
from rtfskit.weights import WeightStore, save_weights, write_container

from conftest import SMALL_FRAMES, SMALL_LENGTH


# =============================================================================
# Schema and initialisation
# =============================================================================


class TestSchema:
    def test_shared_blocks_listed_once(self, small_config):
        names = [spec.name for spec in pipeline.required_tensors(small_config)]
        assert len(names) == len(set(names))
        assert not any(name.startswith("rtfs.1.") for name in names)

    def test_unshared_blocks_have_own_prefix(self, small_config):
        config = small_config.with_overrides({"share_blocks": False})
        names = {spec.name for spec in pipeline.required_tensors(config)}
        for j in range(config.r):
            assert f"rtfs.{j}.reduce.weight" in names
        assert "rtfs.reduce.weight" not in names

    def test_graph_order(self, small_config):
        rows = []
        for spec in pipeline.required_tensors(small_config):
            top = spec.row.split(".")[0]
            if not rows or rows[-1] != top:
                rows.append(top)
        assert rows == ["encoder", "rtfs", "vp", "caf", "mask", "decoder"]

    def test_init_is_seeded(self, small_config):
        a = pipeline.init_random(small_config, 3)
        b = pipeline.init_random(small_config, 3)
        c = pipeline.init_random(small_config, 4)
        name = "rtfs.reduce.weight"
        np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a[name], c[name])

    def test_init_values(self, small_store):
        assert small_store["mask.slope"].dtype == np.float32
        np.testing.assert_array_equal(small_store["mask.slope"], 0.25)
        np.testing.assert_array_equal(small_store["vp.reduce.norm.running_var"], 1.0)
        np.testing.assert_array_equal(small_store["vp.reduce.norm.running_mean"], 0.0)
        bound = 1.0 / np.sqrt(2 * 9)
        assert np.abs(small_store["encoder.conv.weight"]).max() <= bound + 1e-6


class TestValidation:
    def test_missing(self, small_config, small_store):
        tensors = dict(small_store.tensors)
        del tensors["caf.p1.weight"]
        with pytest.raises(WeightError, match="caf.p1.weight"):
            pipeline.build(small_config, WeightStore(tensors))

    def test_wrong_shape(self, small_config, small_store):
        tensors = dict(small_store.tensors)
        tensors["mask.slope"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(WeightError, match="mask.slope"):
            pipeline.build(small_config, WeightStore(tensors))

    def test_unexpected(self, small_config, small_store):
        tensors = dict(small_store.tensors)
        tensors["extra"] = np.zeros(1, dtype=np.float32)
        with pytest.raises(WeightError, match="Unexpected tensor 'extra'"):
            pipeline.build(small_config, WeightStore(tensors))

    def test_shared_graph_reuses_block(self, small_graph):
        assert all(block is small_graph.rtfs[0] for block in small_graph.rtfs)

    def test_load_weights(self, tmp_path, small_store):
        path = tmp_path / "w.rtfs"
        save_weights(small_store, path)
        store = pipeline.load_weights(path)
        assert store.config == small_store.config
        assert store.names() == small_store.names()

    def test_load_weights_needs_config(self, tmp_path, small_store):
        path = tmp_path / "bare.rtfs"
        write_container(path, small_store.tensors)
        with pytest.raises(FormatError, match="configuration"):
            pipeline.load_weights(path)

    def test_load_weights_rejects_other_config(self, tmp_path, small_store):
        path = tmp_path / "w.rtfs"
        save_weights(small_store, path)
        with pytest.raises(WeightError):
            pipeline.load_weights(path, {"h_a": 8})


# =============================================================================
# Forward
# =============================================================================


class TestForward:
    def test_output_length(self, small_graph, small_inputs):
        x, v0 = small_inputs
        out = pipeline.forward(small_graph, x, v0)
        assert out.length == SMALL_LENGTH
        assert out.samples.dtype == np.float32
        assert np.all(np.isfinite(out.samples))

    @pytest.mark.parametrize("length", [333, 800])
    def test_other_lengths(self, small_graph, small_config, rng, length):
        x = Waveform(rng.standard_normal(length).astype(np.float32))
        v0 = rng.standard_normal((small_config.c_v, 6)).astype(np.float32)
        assert pipeline.forward(small_graph, x, v0).length == length

    def test_deterministic(self, small_graph, small_inputs):
        x, v0 = small_inputs
        first = array_fingerprint(pipeline.forward(small_graph, x, v0).samples)
        second = array_fingerprint(pipeline.forward(small_graph, x, v0).samples)
        assert first == second

    def test_zero_input_zero_output(self, small_config, small_store, small_inputs):
        graph = pipeline.build(small_config, small_store.zero_biases())
        _, v0 = small_inputs
        silence = Waveform(np.zeros(SMALL_LENGTH, dtype=np.float32))
        out = pipeline.forward(graph, silence, v0)
        assert np.max(np.abs(out.samples)) <= 1e-6

    def test_trace(self, small_graph, small_config, small_inputs):
        x, v0 = small_inputs
        out, trace = pipeline.forward_trace(small_graph, x, v0)
        last = f"a{small_config.r + 1}"
        for name in ("a0", "a1", "v1", "a2", last, "m", "z", "out"):
            assert name in trace.tensors
        assert trace.tensors["a0"].shape == (small_config.c_a, 26, 17)
        assert trace.tensors["v1"].shape == v0.shape
        assert set(trace.timings) == {"encoder", "rtfs", "vp", "caf", "mask", "decoder"}
        np.testing.assert_array_equal(trace.tensors["out"], out.samples)

    def test_plain_mask_mode(self, small_config, small_store, small_inputs):
        config = small_config.with_overrides({"mask_mode": "mask"})
        store = WeightStore(small_store.tensors, config=config)
        x, v0 = small_inputs
        plain = pipeline.forward(pipeline.build(config, store), x, v0)
        complex_ = pipeline.forward(pipeline.build(small_config, small_store), x, v0)
        assert plain.length == complex_.length
        assert not np.allclose(plain.samples, complex_.samples)

    def test_unshared_blocks_run(self, small_config, small_inputs):
        config = small_config.with_overrides({"share_blocks": False})
        graph = pipeline.build(config, seed=5)
        assert graph.rtfs[0] is not graph.rtfs[1]
        x, v0 = small_inputs
        assert pipeline.forward(graph, x, v0).length == SMALL_LENGTH

    def test_sample_rate_mismatch(self, small_graph, small_inputs):
        x, v0 = small_inputs
        with pytest.raises(FormatError, match="sample rate"):
            pipeline.forward(small_graph, Waveform(x.samples, 8000), v0)

    def test_visual_channel_mismatch(self, small_graph, small_inputs):
        x, _ = small_inputs
        with pytest.raises(ShapeError):
            pipeline.forward(small_graph, x, np.zeros((3, 4), dtype=np.float32))

    def test_inputs_leave_no_state_behind(self, small_graph, small_inputs, rng):
        x, v0 = small_inputs
        other = Waveform(rng.standard_normal(SMALL_LENGTH).astype(np.float32))
        other_v0 = rng.standard_normal(v0.shape).astype(np.float32)
        first = pipeline.forward(small_graph, x, v0).samples
        pipeline.forward(small_graph, other, other_v0)
        again = pipeline.forward(small_graph, x, v0).samples
        assert first.tobytes() == again.tobytes()

    def test_non_finite_input_raises(self, small_graph, small_inputs):
        x, v0 = small_inputs
        samples = x.samples.copy()
        samples[100] = np.inf
        with pytest.raises(NumericalError):
            pipeline.forward(small_graph, Waveform(samples), v0)

    def test_intermediates_stay_bounded(self, small_graph, small_config, rng):
        x = Waveform(rng.standard_normal(SMALL_LENGTH).astype(np.float32))
        v0 = rng.standard_normal((small_config.c_v, SMALL_FRAMES)).astype(np.float32)
        _, trace = pipeline.forward_trace(small_graph, x, v0)
        peaks = {name: float(np.max(np.abs(value))) for name, value in trace.tensors.items()}
        assert max(peaks.values()) < 1e6, peaks


class TestBlockSharing:
    @staticmethod
    def bumped(store, name):
        tensors = dict(store.tensors)
        tensors[name] = tensors[name] * 1.5 + 0.1
        return WeightStore(tensors=tensors, config=store.config)

    def test_shared_tensor_reaches_every_application(self, small_config, small_store, rng):
        graph = pipeline.build(small_config, small_store)
        changed = pipeline.build(small_config, self.bumped(small_store, "rtfs.restore.weight"))
        a = rng.standard_normal((small_config.c_a, 26, small_config.freq_bins))
        for j in range(small_config.r):
            assert not np.allclose(rtfs_forward(a, changed.rtfs[j]), rtfs_forward(a, graph.rtfs[j]))

    def test_unshared_tensor_reaches_one_application(self, small_config, small_inputs, rng):
        config = small_config.with_overrides({"share_blocks": False})
        store = pipeline.init_random(config, 5)
        graph = pipeline.build(config, store)
        changed = pipeline.build(config, self.bumped(store, "rtfs.1.restore.weight"))
        a = rng.standard_normal((config.c_a, 26, config.freq_bins))
        for j in range(config.r):
            same = np.array_equal(rtfs_forward(a, changed.rtfs[j]), rtfs_forward(a, graph.rtfs[j]))
            assert same == (j != 1)

        x, v0 = small_inputs
        _, before = pipeline.forward_trace(graph, x, v0)
        _, after = pipeline.forward_trace(changed, x, v0)
        np.testing.assert_array_equal(after.tensors["a2"], before.tensors["a2"])
        assert not np.allclose(after.tensors["a3"], before.tensors["a3"])


class TestVisual:
    def test_load_visual(self, tmp_path, small_config, rng):
        v0 = rng.standard_normal((small_config.c_v, 5)).astype(np.float32)
        path = tmp_path / "v.rtfs"
        write_container(path, {"v0": v0})
        np.testing.assert_array_equal(pipeline.load_visual(path, small_config), v0)

    def test_missing_v0(self, tmp_path, small_config):
        path = tmp_path / "v.rtfs"
        write_container(path, {"lips": np.zeros((16, 4), dtype=np.float32)})
        with pytest.raises(WeightError, match="v0"):
            pipeline.load_visual(path, small_config)

    def test_wrong_visual_shape(self, tmp_path, small_config):
        path = tmp_path / "v.rtfs"
        write_container(path, {"v0": np.zeros((7, 4), dtype=np.float32)})
        with pytest.raises(ShapeError):
            pipeline.load_visual(path, small_config)


# =============================================================================
# Default configuration
# =============================================================================


class TestDefaultThroughput:
    def test_two_second_forward_under_thirty_seconds(self, rng):
        config = ModelConfig()
        graph = pipeline.build(config, pipeline.init_random(config, 0))
        x = Waveform((0.1 * rng.standard_normal(2 * config.sample_rate)).astype(np.float32))
        v0 = rng.standard_normal((config.c_v, visual_frames(config, x.length))).astype(np.float32)
        start = time.perf_counter()
        out = pipeline.forward(graph, x, v0)
        elapsed = time.perf_counter() - start
        assert out.length == x.length
        assert elapsed < 30.0, f"2 s forward took {elapsed:.1f} s"
