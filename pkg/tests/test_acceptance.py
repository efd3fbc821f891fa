"""Acceptance suite: the eleven end-to-end criteria at their stated tolerances.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts. The toy-benchmark criteria (6-8) share one trained full model
per session; criterion 7 trains three more decoder variants.
"""

from __future__ import annotations

import math
import time
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
import pytest

import gradcases as G
from conftest import record
from pcjscc import loss as L
from pcjscc import tensor as tn
from pcjscc.channel import RAYLEIGH_SCALE, Channel, awgn, draw_rayleigh
from pcjscc.cli import main
from pcjscc.config import dumps, from_flat, toy_config
from pcjscc.data import toy_dataset
from pcjscc.experiments import datasets, offset_spread, sweep, train_run, variant_config
from pcjscc.metrics import d1_psnr, d2_psnr, distortion
from pcjscc.model import ModelConfig, TransmissionModel
from pcjscc.quantizer import Quantizer, QuantizerConfig, power_denormalize, power_normalize
from pcjscc.sscc import SsccConfig, source_only, sscc_transmit
from pcjscc.sscc.ldpc import code_for
from pcjscc.sscc.pipeline import transmit_bits
from pcjscc.stf import budget
from pcjscc.tensor import Tensor
from pcjscc.trainer import validate

pytestmark = pytest.mark.acceptance


# =============================================================================
# Oracles
# =============================================================================

def chamfer_oracle(a, b):
    def one_way(p, q):
        return sum(min(sum((pi[c] - qj[c]) ** 2 for c in range(3)) for qj in q) for pi in p) / len(p)

    return one_way(a, b) + one_way(b, a)


def sparsity_oracle(s, tau):
    flat = [v for row in s for v in row]
    return sum(max(v - tau, 0.0) for v in flat) / len(flat)


def diversity_oracle(z):
    total = 0.0
    for sample in z:
        t, d = len(sample), len(sample[0])
        acc = 0.0
        for i in range(t):
            for j in range(t):
                if i != j:
                    acc += (sum(sample[i][k] * sample[j][k] for k in range(d)) / d) ** 2
        total += acc / (t * (t - 1))
    return total / len(z)


def symbol_oracle(p):
    h = -sum(x * math.log(x) for x in p if x > 0)
    return 1.0 - h / math.log(len(p))


def round_oracle(v, q):
    r = int(Decimal(repr(float(v))).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return max(-q, min(q, r))


# =============================================================================
# Shared toy benchmark
# =============================================================================

SWEEP_TRIALS = 3


@pytest.fixture(scope="session")
def toy():
    cfg = toy_config()
    return cfg, datasets(cfg)


@pytest.fixture(scope="session")
def toy_full(toy):
    cfg, data = toy
    t0 = time.time()
    model, history, tr, va = train_run(cfg, data=data)
    return model, history, tr, va, time.time() - t0


def mean_d1(model, va, snr_db):
    rows = sweep(model, va.points, "snr", [snr_db], SWEEP_TRIALS, 0, Channel("awgn"))
    return rows[0].d1_psnr


# =============================================================================
# Criteria
# =============================================================================

class TestAcceptance:
    def test_c01_gradient_suite(self):
        """Every differentiable op and the tiny full pipeline match central differences."""
        t0 = time.time()
        errs = {}
        for name, make in G.OP_CASES.items():
            fn, params = make(np.random.default_rng(0))
            errs[name] = G.check(fn, params)
        fn, params = G.pipeline_case()
        errs["pipeline"] = G.check(fn, params)
        worst = max(errs, key=errs.get)
        elapsed = time.time() - t0
        ok = errs[worst] < 1e-4 and elapsed < 60
        record(1, ok, f"{len(errs)} cases, worst {worst} rel err {errs[worst]:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
        assert ok

    def test_c02_channel_statistics(self):
        """AWGN variance and Rayleigh second moment over 10^6 draws."""
        t0 = time.time()
        rng = np.random.default_rng(2024)
        devs = {}
        for snr in (-10.0, 0.0, 10.0):
            n = awgn(np.zeros(10**6), snr, rng)
            devs[f"awgn{snr:+g}"] = abs(n.var() / 10 ** (-snr / 10) - 1)
        h = draw_rayleigh(10**6, rng, RAYLEIGH_SCALE)
        devs["rayleigh"] = abs(np.mean(h**2) - 1.0)
        elapsed = time.time() - t0
        ok = max(devs.values()) < 0.01 and elapsed < 30
        record(2, ok, ", ".join(f"{k} dev {v:.2e}" for k, v in devs.items()) + f" (< 1e-2), {elapsed:.1f}s")
        assert ok

    def test_c03_quantizer_contracts(self):
        """STE forward is exact rounding, its Jacobian is the identity, and power scaling round-trips."""
        rng = np.random.default_rng(3)
        q = Quantizer(QuantizerConfig(bits=8, alpha_init=4.0))
        qmax = q.cfg.qmax
        zhat = rng.normal(scale=12.0, size=10**5)
        # exact ties are the interesting cases for the rounding rule
        zhat[:2000] = (rng.integers(-40, 40, size=2000) + 0.5) / float(q.alpha.data)
        zq = q.quantize(Tensor(zhat)).data
        scaled = float(q.alpha.data) * zhat
        oracle = np.array([round_oracle(v, qmax) for v in scaled], dtype=np.float64)
        forward_ok = np.array_equal(zq, oracle)

        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        jac = np.zeros((x.data.size, x.data.size))
        for i in range(x.data.size):
            x.grad = None
            out = q.quantize(x)
            seed = np.zeros(out.shape)
            seed.reshape(-1)[i] = 1.0
            tn.backward(out, seed)
            jac[i] = x.grad.reshape(-1)
        jacobian_ok = np.array_equal(jac, np.eye(x.data.size))

        ints = rng.integers(-qmax, qmax + 1, size=(500, 16, 64)).astype(np.float64)
        ints[0] = 0.0
        y, s = power_normalize(Tensor(ints))
        back = power_denormalize(y, s).data
        roundtrip_ok = np.array_equal(back, ints)
        ok = forward_ok and jacobian_ok and roundtrip_ok
        record(3, ok, f"forward==round-half-away on 1e5: {forward_ok}; Jacobian==I: {jacobian_ok}; "
                      f"power round trip bit-exact on 500 payloads: {roundtrip_ok}")
        assert ok

    def test_c04_loss_oracles(self):
        """Each loss term against a loop implementation on 100 random instances, plus the weighted sum."""
        rng = np.random.default_rng(4)
        worst = {"chamfer": 0.0, "sparsity": 0.0, "diversity": 0.0, "symbol": 0.0}
        composition_exact = True
        for _ in range(100):
            a, b = rng.normal(size=(int(rng.integers(1, 12)), 3)), rng.normal(size=(int(rng.integers(1, 12)), 3))
            cd = L.chamfer(a, b)
            worst["chamfer"] = max(worst["chamfer"], abs(float(cd.data) - chamfer_oracle(a.tolist(), b.tolist())))
            s = rng.uniform(size=(int(rng.integers(1, 4)), int(rng.integers(1, 8))))
            sp = L.sparsity_penalty(s, 0.1)
            worst["sparsity"] = max(worst["sparsity"], abs(float(sp.data) - sparsity_oracle(s.tolist(), 0.1)))
            z = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 9))))
            dv = L.diversity_penalty(z)
            worst["diversity"] = max(worst["diversity"], abs(float(dv.data) - diversity_oracle(z.tolist())))
            p = rng.uniform(size=int(rng.integers(2, 40))) * (rng.uniform(size=1) > 0.3)
            p[0] += 0.1
            p /= p.sum()
            sym = L.symbol_usage_penalty(p)
            worst["symbol"] = max(worst["symbol"], abs(float(sym.data) - symbol_oracle(p.tolist())))
            br = L.total(cd, sym, sp, dv, L.LossWeights(0.5, 1.0, 1.0))
            expected = float(cd.data) + 0.5 * float(sym.data) + 1.0 * float(sp.data) + 1.0 * float(dv.data)
            composition_exact &= float(br.total.data) == expected
        ok = max(worst.values()) < 1e-10 and composition_exact
        record(4, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (< 1e-10); total exact: {composition_exact}")
        assert ok

    def test_c05_payload_accounting(self):
        """CBR and bpp as exact rationals; small models also count the symbols they actually send."""
        grid = [(k, d, n, b) for k in (1, 4, 16, 64) for d in (8, 64, 256) for n in (64, 256, 2048) for b in (4, 8)]
        formula_ok = all(budget(k, d, n, b).cbr == Fraction(k * d, 3 * n) and budget(k, d, n, b).bpp == Fraction(k * d * b, n)
                         for k, d, n, b in grid)
        paper_scale = budget(64, 256, 2048, 8)
        scale_ok = paper_scale.cbr == Fraction(8, 3) and paper_scale.bpp == 64
        counted_ok = True
        for k in (1, 2, 4):
            cfg = ModelConfig(points=64, tokens=4, dim=8, depth=1, heads=2, ffn_hidden=16, keep_tokens=k,
                              snr_hidden=8, head_hidden=8, seed_dim=4)
            pts = toy_dataset(2, 64, seed=k).points
            res = TransmissionModel(cfg).transmit(pts, Channel("awgn", 10.0), np.random.default_rng(0))
            per_cloud = res.payload.symbols[0].size
            counted_ok &= Fraction(per_cloud, 3 * cfg.points) == budget(k, 8, 64, 8).cbr
            counted_ok &= Fraction(per_cloud * cfg.bits, cfg.points) == budget(k, 8, 64, 8).bpp
        ok = formula_ok and scale_ok and counted_ok
        record(5, ok, f"{len(grid)} (K,D,N,b) cases exact: {formula_ok}; D=256,N=2048,K=64 -> CBR 8/3, "
                      f"64 bpp: {scale_ok}; counted payload symbols agree: {counted_ok}")
        assert ok

    def test_c06_toy_training(self, toy_full):
        """Validation Chamfer drops to <= 20% of epoch 0, and D1 at +10 dB beats -10 dB by >= 3 dB."""
        model, history, tr, va, elapsed = toy_full
        cfg = toy_config()
        final = validate(model, va, cfg.train)
        ratio = final / history[0]["val_cd"]
        hi, lo = mean_d1(model, va, 10.0), mean_d1(model, va, -10.0)
        ok = ratio <= 0.2 and hi - lo >= 3.0 and elapsed < 1800
        record(6, ok, f"val CD {history[0]['val_cd']:.4f} -> {final:.4f} (ratio {ratio:.3f} <= 0.2) after "
                      f"{history[-1]['epoch']} epochs; D1 +10 dB {hi:.2f} vs -10 dB {lo:.2f} "
                      f"(gap {hi - lo:.2f} >= 3); train {elapsed:.0f}s (< 1800s)")
        assert ok

    def test_c07_ablation_direction(self, toy, toy_full):
        """At -20 dB: coarse-only <= full, and dropping the residual head or upsampling loses D1."""
        cfg, data = toy
        full, *_ = toy_full
        va = data[1]
        d1 = {"full": mean_d1(full, va, -20.0)}
        for name in ("residual", "upsample", "coarse-only"):
            model, *_ = train_run(variant_config(cfg, name), data=data)
            d1[name] = mean_d1(model, va, -20.0)
        ok = d1["coarse-only"] <= d1["full"] and d1["residual"] < d1["full"] and d1["upsample"] < d1["full"]
        record(7, ok, "D1 at -20 dB: " + ", ".join(f"{k} {v:.2f}" for k, v in d1.items()))
        assert ok

    def test_c08_snr_mismatch_sweep(self, toy_full):
        """Offsets {-2, 0, +2} dB at -10 dB give finite D1 and a reported spread."""
        model, _, _, va, _ = toy_full
        rows = sweep(model, va.points, "offset", [-2.0, 0.0, 2.0], SWEEP_TRIALS, 0, Channel("awgn", -10.0))
        finite = len(rows) == 3 and all(math.isfinite(r.d1_psnr) and math.isfinite(r.d2_psnr) for r in rows)
        spread = offset_spread(rows)
        record(8, finite, "D1 " + ", ".join(f"offset {r.value:+g}: {r.d1_psnr:.3f}" for r in rows)
               + f"; |D1(+2) - D1(-2)| = {spread:.3f} dB")
        assert finite and math.isfinite(spread)

    def test_c09_ldpc_sscc(self):
        """Lossless noiseless chain, parity on 10^4 messages, BER waterfall, and low-SNR decode failure."""
        t0 = time.time()
        rng = np.random.default_rng(9)
        cloud = toy_dataset(3, 2048, seed=9).points
        lossless = True
        for profile in (648, 1200):
            cfg = SsccConfig(depth=8, ldpc=profile)
            for pts in cloud:
                res = sscc_transmit(pts, cfg, math.inf, rng)
                lossless &= res.ok and res.bit_errors == 0 and np.array_equal(res.points, source_only(pts, 8))
            msgs = rng.integers(0, 2, size=(50, cfg.code.k), dtype=np.uint8)
            dec, conv, _ = transmit_bits(msgs, cfg, math.inf, rng)
            lossless &= bool(conv.all()) and np.array_equal(dec, msgs)

        parity = True
        for profile in (648, 1200):
            code = code_for(profile)
            msgs = rng.integers(0, 2, size=(10**4, code.k), dtype=np.uint8)
            cw = code.encode(msgs)
            parity &= not np.any(code.syndrome(cw)) and np.array_equal(cw[:, :code.k], msgs)

        grid = [2.0, 3.0, 4.0, 5.0, 6.0]
        # AWGN errors at 2 dB come from a few failing codewords per million bits
        bits = {"awgn": 4 * 10**6, "rayleigh": 10**6}
        ber = {}
        for channel in ("awgn", "rayleigh"):
            cfg = SsccConfig(ldpc=648, channel=channel)
            words = -(-bits[channel] // cfg.code.k)
            for snr in grid:
                r = np.random.default_rng([9, int(snr), int(channel == "rayleigh")])
                msgs = r.integers(0, 2, size=(words, cfg.code.k), dtype=np.uint8)
                dec, _, _ = transmit_bits(msgs, cfg, snr, r)
                ber[channel, snr] = float(np.mean(dec != msgs))
        awgn_ber = [ber["awgn", s] for s in grid]
        ray_ber = [ber["rayleigh", s] for s in grid]
        awgn_ok = awgn_ber[-1] < awgn_ber[0] and all(b2 <= b1 for b1, b2 in zip(awgn_ber, awgn_ber[1:]))
        ray_ok = all(b2 < b1 for b1, b2 in zip(ray_ber, ray_ber[1:]))

        cfg = SsccConfig(depth=8, ldpc=648, modulation="qam16")
        low = [sscc_transmit(pts, cfg, snr, np.random.default_rng([9, i, j]))
               for i, pts in enumerate(cloud) for j, snr in enumerate((-10.0, -5.0, 0.0))]
        high = [sscc_transmit(pts, cfg, 20.0, np.random.default_rng([9, i])) for i, pts in enumerate(cloud)]
        failure_ok = all(not r.ok for r in low) and all(r.ok for r in high)
        elapsed = time.time() - t0
        ok = lossless and parity and awgn_ok and ray_ok and failure_ok and elapsed < 600
        record(9, ok, f"noiseless lossless: {lossless}; parity on 1e4 msgs x2 codes: {parity}; "
                      f"AWGN BER 2..6 dB {['%.1e' % b for b in awgn_ber]} (BER(6)<BER(2), non-increasing): {awgn_ok}; "
                      f"Rayleigh BER {['%.3f' % b for b in ray_ber]} strictly decreasing: {ray_ok}; "
                      f"failures at <=0 dB {sum(not r.ok for r in low)}/{len(low)}, ok at 20 dB "
                      f"{sum(r.ok for r in high)}/{len(high)}; {elapsed:.0f}s (< 600s)")
        assert ok

    def test_c10_metrics(self):
        """D2 >= D1 on random pairs, rotation invariance, and the single-point hand computation."""
        rng = np.random.default_rng(10)
        d2_ge_d1 = True
        for _ in range(100):
            ref = rng.uniform(size=(int(rng.integers(20, 120)), 3))
            rec = ref[rng.permutation(len(ref))[: int(rng.integers(15, len(ref) + 1))]]
            rec = rec + rng.normal(scale=10 ** rng.uniform(-3, -1), size=rec.shape)
            rep = distortion(ref, rec)
            d2_ge_d1 &= rep.d2_psnr >= rep.d1_psnr
        worst_rot = 0.0
        for _ in range(20):
            ref = rng.uniform(size=(200, 3))
            rec = ref + rng.normal(scale=0.01, size=ref.shape)
            q, r = np.linalg.qr(rng.normal(size=(3, 3)))
            rot = q * np.sign(np.diag(r))
            if np.linalg.det(rot) < 0:
                rot[:, 0] *= -1
            shift = rng.normal(size=3)
            a, b = distortion(ref, rec), distortion(ref @ rot.T + shift, rec @ rot.T + shift)
            worst_rot = max(worst_rot, abs(a.d1_psnr - b.d1_psnr), abs(a.d2_psnr - b.d2_psnr))
        ref, rec = np.zeros((1, 3)), np.array([[0.0, 0.0, 0.1]])
        hand = 10 * math.log10(3 / 0.01)
        one_d1 = d1_psnr(ref, rec, math.sqrt(3))
        one_d2 = d2_psnr(ref, rec, ref_normals=np.array([[0.0, 0.0, 1.0]]), peak=math.sqrt(3))
        single_ok = abs(one_d1 - hand) < 1e-6 and abs(one_d2 - hand) < 1e-6 and abs(hand - 24.77) < 5e-3
        ok = d2_ge_d1 and worst_rot < 1e-9 and single_ok
        record(10, ok, f"D2>=D1 on 100 pairs: {d2_ge_d1}; rotation max |dPSNR| {worst_rot:.1e} dB (< 1e-9); "
                       f"single point D1 {one_d1:.9f} D2 {one_d2:.9f} vs {hand:.9f} dB")
        assert ok

    def test_c11_cli_determinism(self, tmp_path):
        """Two train runs and two sweeps with identical seeds write byte-identical CSVs."""
        cfg = from_flat({"data.points": 64, "encoder.tokens": 4, "encoder.dim": 16, "encoder.depth": 1,
                         "encoder.heads": 2, "encoder.ffn_hidden": 32, "data.count": 24,
                         "train.max_epochs": 3, "train.batch_size": 8}, toy_config())
        config = tmp_path / "cfg.toml"
        config.write_text(dumps(cfg))
        for run in ("a", "b"):
            assert main(["train", "--config", str(config), "--out", str(tmp_path / run), "--seed", "7"]) == 0
            assert main(["sweep", "--model", str(tmp_path / run / "model.npz"), "--axis", "snr",
                         "--grid=-10,0,10", "--trials", "2", "--toy", "4", "--seed", "7",
                         "--out", str(tmp_path / run / "sweep.csv")]) == 0
        same_hist = (tmp_path / "a/history.csv").read_bytes() == (tmp_path / "b/history.csv").read_bytes()
        same_sweep = (tmp_path / "a/sweep.csv").read_bytes() == (tmp_path / "b/sweep.csv").read_bytes()
        ok = same_hist and same_sweep
        record(11, ok, f"train history.csv identical: {same_hist}; sweep CSV identical: {same_sweep}")
        assert ok
