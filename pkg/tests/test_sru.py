"""Tests for the SRU stack."""

import numpy as np
import pytest

from rtfskit.errors import ShapeError
from rtfskit.sru import SruLayerWeights, SruStack, sru_forward, sru_layer, sru_macs
from rtfskit.weights import WeightStore


def random_layer(rng, d_in, hidden, reverse=False):
    return SruLayerWeights(
        W=rng.standard_normal((3 * hidden, d_in)) * 0.3,
        v_f=rng.standard_normal(hidden),
        v_r=rng.standard_normal(hidden),
        b_f=rng.standard_normal(hidden),
        b_r=rng.standard_normal(hidden),
        P=rng.standard_normal((hidden, d_in)) if d_in != hidden else None,
        reverse=reverse,
    )


def scalar_sru(x, w):
    """Step-by-step recurrence over a (d_in, N) sequence."""

    h = w.hidden
    c = np.zeros(h)
    outputs = []
    for n in range(x.shape[1]):
        xt = x[:, n]
        proj = w.W @ xt
        f = 1 / (1 + np.exp(-(proj[h : 2 * h] + w.v_f * c + w.b_f)))
        c = f * c + (1 - f) * proj[:h]
        r = 1 / (1 + np.exp(-(proj[2 * h :] + w.v_r * c + w.b_r)))
        highway = xt if w.P is None else w.P @ xt
        outputs.append(r * c + (1 - r) * highway)
    return np.stack(outputs, axis=1)


class TestSruLayer:
    @pytest.mark.parametrize("d_in,hidden", [(4, 4), (6, 3)])
    def test_matches_scalar_recurrence(self, rng, d_in, hidden):
        w = random_layer(rng, d_in, hidden)
        x = rng.standard_normal((d_in, 9))
        out = sru_layer(x[None], w)[0]
        np.testing.assert_allclose(out, scalar_sru(x, w), atol=1e-12)

    def test_reverse_direction(self, rng):
        w = random_layer(rng, 5, 5, reverse=True)
        x = rng.standard_normal((5, 7))
        out = sru_layer(x[None], w)[0]
        expected = scalar_sru(x[:, ::-1], w)[:, ::-1]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_causal(self, rng):
        """A forward layer's output at step n ignores inputs after n."""
        w = random_layer(rng, 3, 3)
        x = rng.standard_normal((3, 8))
        changed = x.copy()
        changed[:, 5:] += 10.0
        a, b = sru_layer(x[None], w)[0], sru_layer(changed[None], w)[0]
        np.testing.assert_array_equal(a[:, :5], b[:, :5])

    def test_highway_projection_required(self, rng):
        w = random_layer(rng, 6, 3)
        with pytest.raises(ShapeError):
            SruLayerWeights(w.W, w.v_f, w.v_r, w.b_f, w.b_r, P=None).check()

    def test_zero_weights_halve_input(self):
        """Zero weights and biases: f = r = 0.5, c stays 0, so h = 0.5 x."""
        hidden = 4
        w = SruLayerWeights(
            W=np.zeros((3 * hidden, hidden)),
            v_f=np.zeros(hidden),
            v_r=np.zeros(hidden),
            b_f=np.zeros(hidden),
            b_r=np.zeros(hidden),
            P=None,
        )
        x = np.arange(12.0).reshape(1, hidden, 3) - 5.0
        np.testing.assert_allclose(sru_layer(x, w), 0.5 * x, atol=1e-15)

    def test_cell_state_bounded_by_candidate(self, rng):
        """With a saturated reset gate h equals c, a convex mix of past candidates."""
        w = random_layer(rng, 4, 4)
        w = SruLayerWeights(w.W, w.v_f, np.zeros(4), w.b_f, np.full(4, 1e3), None)
        x = 5.0 * rng.uniform(-1.0, 1.0, size=(1, 4, 30))
        cell = sru_layer(x, w)[0]
        candidate = w.W[:4] @ x[0]
        bound = np.abs(candidate).max(axis=1, keepdims=True)
        assert np.all(np.abs(cell) <= bound + 1e-12)

    def test_strided_input_matches_contiguous(self, rng):
        w = random_layer(rng, 5, 3, reverse=True)
        base = rng.standard_normal((7, 4, 5))
        strided = base.transpose(1, 2, 0)
        assert not strided.flags.c_contiguous
        out = sru_layer(strided, w)
        np.testing.assert_allclose(out, sru_layer(np.ascontiguousarray(strided), w), atol=1e-12)
        np.testing.assert_allclose(out[2], scalar_sru(strided[2][:, ::-1], w)[:, ::-1], atol=1e-12)


class TestSruStack:
    def test_entries_and_load(self, rng):
        entries = SruStack.entries("p", 8, 4, 2, True, "row")
        store = WeightStore({spec.name: rng.standard_normal(spec.shape) for spec in entries})
        stack = SruStack.load(store, "p", 8, 4, 2, True)
        assert stack.num_layers == 2
        assert stack.output_size == 8
        # only the first layer needs a highway projection: 8 -> 4, then 8 -> 4 again
        assert "p.0.fwd.P" in store and "p.1.bwd.P" in store

    def test_forward_shapes(self, rng):
        entries = SruStack.entries("p", 6, 4, 2, True, "row")
        store = WeightStore({spec.name: rng.standard_normal(spec.shape) * 0.3 for spec in entries})
        stack = SruStack.load(store, "p", 6, 4, 2, True)
        assert sru_forward(rng.standard_normal((6, 11)), stack).shape == (8, 11)
        assert sru_forward(rng.standard_normal((3, 6, 11)), stack).shape == (3, 8, 11)

    def test_unidirectional_identity_width(self, rng):
        entries = SruStack.entries("p", 4, 4, 3, False, "row")
        assert not any(spec.name.endswith(".P") for spec in entries)

    def test_wrong_width(self, rng):
        entries = SruStack.entries("p", 6, 4, 1, False, "row")
        store = WeightStore({spec.name: rng.standard_normal(spec.shape) for spec in entries})
        stack = SruStack.load(store, "p", 6, 4, 1, False)
        with pytest.raises(ShapeError):
            sru_forward(rng.standard_normal((5, 3)), stack)

    def test_macs(self):
        # one unidirectional layer 8 -> 4 with projection: (3*4*8 + 4*8) per step
        assert sru_macs(8, 4, 1, False, 10) == 128 * 10
        assert sru_macs(8, 4, 1, True, 10) == 2 * 128 * 10
