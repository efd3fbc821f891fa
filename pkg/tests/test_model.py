"""Tests for the assembled transmission model: soft training path and hard transmit path."""

import math

import numpy as np
import pytest

from pcjscc import tensor as tn
from pcjscc.channel import Channel
from pcjscc.model import ModelConfig, TransmissionModel
from pcjscc.quantizer import normalize, power_gain
from pcjscc.stf import budget
from pcjscc.tensor import Tensor


@pytest.fixture
def batch(tiny_data):
    return tiny_data.points[:3]


class TestConfig:
    @pytest.mark.parametrize("kw", [{"keep_tokens": 0}, {"keep_tokens": 5}, {"points": 66},
                                    {"ablation": "all"}, {"bits": 1}])
    def test_invalid(self, tiny_config, kw):
        from dataclasses import asdict
        with pytest.raises(ValueError):
            ModelConfig(**{**asdict(tiny_config), **kw})

    def test_defaults_are_full_scale(self):
        c = ModelConfig()
        assert (c.points, c.tokens, c.dim, c.depth, c.ffn_hidden, c.bits) == (2048, 64, 256, 4, 512, 8)
        assert c.patch_size == 32 and not c.clip_output and c.dequantize


class TestTransmit:
    def test_shapes_and_payload(self, tiny_model, batch):
        res = tiny_model.transmit(batch, Channel("awgn", 0.0), np.random.default_rng(0), keep_tokens=2)
        assert res.x_hat.shape == (3, 64, 3)
        assert res.payload.symbols.shape == (3, 2, 8) and res.payload.indices.shape == (3, 2)
        assert np.all(np.abs(res.payload.symbols) <= 127)
        assert res.scores.shape == (3, 4)
        assert res.cbr == float(budget(2, 8, 64).cbr)

    def test_payload_holds_no_training_statistics(self, tiny_model, batch):
        """The symbol-usage term exists only in training; transmission carries symbols and side info."""
        res = tiny_model.transmit(batch, Channel("awgn", 0.0), np.random.default_rng(0))
        assert set(vars(res.payload)) == {"symbols", "mu", "sigma", "power_scale", "indices"}
        tiny_model.quantizer.training = False
        tiny_model.transmit(batch, Channel("awgn", 0.0), np.random.default_rng(0))  # no histogram needed

    def test_power_normalised_symbols(self, tiny_model, batch):
        res = tiny_model.transmit(batch, Channel("awgn", math.inf), np.random.default_rng(0))
        zq = res.payload.symbols.astype(float)
        ms = ((zq / res.payload.power_scale) ** 2).mean(axis=(1, 2))
        np.testing.assert_allclose(ms, 1.0, atol=1e-12)

    def test_noiseless_full_payload_equals_autoencoder(self, tiny_model, batch):
        """K = T over a noiseless channel reproduces encode -> quantise -> dequantise -> decode."""
        m = tiny_model
        res = m.transmit(batch, Channel("awgn", math.inf), np.random.default_rng(0), keep_tokens=4)
        with tn.no_grad():
            centers, rel = m.group(batch)
            z_f, _ = m.stf(m.encoder(centers, rel))
            zhat, _, _ = normalize(z_f)
            zq = m.quantizer.quantize(zhat)
            y = zq / m.quantizer.alpha
            x_hat = m.decoder(y, math.inf).x_hat.data
        np.testing.assert_array_equal(res.x_hat, x_hat)

    def test_same_seed_same_output(self, tiny_model, batch):
        a = tiny_model.transmit(batch, Channel("rayleigh", 0.0), np.random.default_rng(4))
        b = tiny_model.transmit(batch, Channel("rayleigh", 0.0), np.random.default_rng(4))
        np.testing.assert_array_equal(a.x_hat, b.x_hat)
        np.testing.assert_array_equal(a.realization.h, b.realization.h)

    def test_dropped_tokens_change_the_output(self, tiny_model, batch):
        full = tiny_model.transmit(batch, Channel("awgn", math.inf), np.random.default_rng(0), 4).x_hat
        part = tiny_model.transmit(batch, Channel("awgn", math.inf), np.random.default_rng(0), 1).x_hat
        assert not np.array_equal(full, part)

    def test_clip_output_option(self, tiny_config, batch):
        from dataclasses import replace
        model = TransmissionModel(replace(tiny_config, clip_output=True), seed=0)
        model.decoder.residual.fc2.bias.data[:] = 5.0
        x = model.transmit(batch, Channel("awgn", 0.0), np.random.default_rng(0)).x_hat
        assert x.min() >= 0.0 and x.max() <= 1.0

    def test_offset_reaches_the_decoder(self, tiny_model, batch):
        a = tiny_model.transmit(batch, Channel("awgn", 0.0, offset_db=-2.0), np.random.default_rng(0))
        b = tiny_model.transmit(batch, Channel("awgn", 0.0, offset_db=2.0), np.random.default_rng(0))
        assert a.realization.snr_estimate_db == -2.0 and b.realization.snr_estimate_db == 2.0
        assert not np.array_equal(a.x_hat, b.x_hat)


class TestLoss:
    def test_breakdown_and_gradients(self, tiny_model, batch):
        br, x_hat = tiny_model.loss(batch, tiny_model.group(batch), 0.0, np.random.default_rng(0))
        assert x_hat.shape == (3, 64, 3)
        d = br.as_dict()
        assert d["total"] == pytest.approx(d["cd"] + 0.5 * d["sym"] + d["sparsity"] + d["diversity"])
        br.total.backward()
        assert all(p.grad is not None for p in tiny_model.parameters())

    def test_receiver_undoes_gain_and_scale(self, tiny_model, rng):
        zq = Tensor(rng.integers(-9, 10, size=(2, 4, 8)).astype(float))
        gain = power_gain(zq)
        back = tiny_model.receive(zq * gain, gain).data
        np.testing.assert_allclose(back, zq.data / 4.0, rtol=1e-12)
