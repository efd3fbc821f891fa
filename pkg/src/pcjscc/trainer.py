"""Adam training with the channel in the loop, early stopping and checkpoints.

Randomness per epoch comes from ``numpy.random.default_rng([seed, epoch])``
(PCG64 via SeedSequence), so a run is fully determined by (seed, configs,
data) and a checkpoint only needs the epoch counter to resume exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import loss as L
from . import tensor as tn
from .channel import Channel
from .data import ShapeDataset
from .model import ModelConfig, TransmissionModel

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pcjscc-checkpoint/1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    snr_low: float = -10.0
    snr_high: float = 10.0
    val_snr_db: float = 0.0
    channel: str = "awgn"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_sym: float = 0.5
    lambda_sparsity: float = 1.0
    lambda_diversity: float = 1.0
    tau: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size, patience must be >= 1 and max_epochs >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        if self.snr_low > self.snr_high:
            raise ValueError(f"snr range low {self.snr_low} > high {self.snr_high}")

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_sym, self.lambda_sparsity, self.lambda_diversity, self.tau)


def config_digest(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# Adam -------------------------------------------------------------------------

def adam_step(params, grads, moments, lr, wd=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One in-place Adam update with bias correction; L2 weight decay is added to the gradient.

    ``moments`` is a dict with keys ``m``, ``v`` (lists of arrays) and ``t`` (step count).
    """
    b1, b2 = betas
    moments["t"] += 1
    t = moments["t"]
    for p, g, m, v in zip(params, grads, moments["m"], moments["v"]):
        g = g + wd * p
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.state = {"m": [np.zeros_like(p.data) for p in self.params],
                      "v": [np.zeros_like(p.data) for p in self.params], "t": 0}

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr, self.wd, self.betas, self.eps)

    def zero_grad(self) -> None:
        tn.zero_grad(self.params)


# training ---------------------------------------------------------------------

@dataclass
class TrainState:
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = 0
    best_params: dict | None = None
    bad_epochs: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False


def _grouped(ds: ShapeDataset, cfg: ModelConfig) -> ShapeDataset:
    if ds.centers is None or ds.centers.shape[1] != cfg.tokens or ds.rel.shape[2] != cfg.patch_size:
        ds.group(cfg.tokens, cfg.patch_size)
    return ds


def validate(model: TransmissionModel, val: ShapeDataset, tcfg: TrainConfig, batch: int | None = None) -> float:
    """Mean soft-path Chamfer on ``val`` at the fixed validation SNR, fixed noise seed."""
    _grouped(val, model.cfg)
    batch = batch or tcfg.batch_size
    rng = np.random.default_rng([tcfg.seed, 2**31 - 1])
    channel = Channel(tcfg.channel)
    total, n = 0.0, 0
    with tn.no_grad():
        for i in range(0, len(val), batch):
            sl = slice(i, i + batch)
            br, _ = model.loss(val.points[sl], (val.centers[sl], val.rel[sl]), tcfg.val_snr_db, rng,
                               tcfg.weights, channel)
            size = len(val.points[sl])
            total += float(br.cd.data) * size
            n += size
    return total / n


def train(model: TransmissionModel, train_set: ShapeDataset, val_set: ShapeDataset,
          tcfg: TrainConfig, state: TrainState | None = None, optimizer: Adam | None = None,
          checkpoint_dir: str | Path | None = None, stop_after: int | None = None):
    """Train until ``max_epochs`` or early stop; restores the best-validation parameters.

    Returns ``(model, history)`` where history rows are dicts (epoch 0 = before training).
    ``state``/``optimizer`` resume a run (see :func:`load_checkpoint`); ``stop_after``
    halts after that epoch without restoring, leaving a resumable state.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    _grouped(train_set, model.cfg)
    params = model.parameters()
    opt = optimizer or Adam(params, tcfg.learning_rate, tcfg.weight_decay,
                            (tcfg.beta1, tcfg.beta2), tcfg.adam_eps)
    st = state or TrainState()
    weights = tcfg.weights
    channel = Channel(tcfg.channel)

    if st.epoch == 0 and not st.history:
        v0 = validate(model, val_set, tcfg)
        st.history.append(_row(0, None, v0, model))
        st.best_val, st.best_params = v0, model.state_dict()

    while st.epoch < tcfg.max_epochs and not st.stopped_early:
        st.epoch += 1
        rng = np.random.default_rng([tcfg.seed, st.epoch])
        order = rng.permutation(len(train_set))
        sums: dict[str, float] = {}
        steps = 0
        for i in range(0, len(order), tcfg.batch_size):
            idx = np.sort(order[i:i + tcfg.batch_size])
            snr = float(rng.uniform(tcfg.snr_low, tcfg.snr_high))
            opt.zero_grad()
            br, _ = model.loss(train_set.points[idx], (train_set.centers[idx], train_set.rel[idx]),
                               snr, rng, weights, channel)
            terms = br.as_dict()
            bad = [k for k, v in terms.items() if not math.isfinite(v)]
            if bad:
                raise TrainingDiverged(f"non-finite loss term(s) {bad} at epoch {st.epoch}, step {steps}: {terms}")
            br.total.backward()
            opt.step()
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        val = validate(model, val_set, tcfg)
        st.history.append(_row(st.epoch, {k: v / steps for k, v in sums.items()}, val, model))
        log.info("epoch %d train=%.5f val_cd=%.5f", st.epoch, sums["total"] / steps, val)
        if val < st.best_val:
            st.best_val, st.best_epoch, st.bad_epochs = val, st.epoch, 0
            st.best_params = model.state_dict()
        else:
            st.bad_epochs += 1
            if st.bad_epochs >= tcfg.patience:
                st.stopped_early = True
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / "last.npz", model, tcfg, opt, st)
        if stop_after is not None and st.epoch >= stop_after:
            return model, st.history

    if st.best_params is not None:
        model.load_state_dict(st.best_params)
    return model, st.history


def _row(epoch: int, terms: dict | None, val: float, model: TransmissionModel) -> dict:
    terms = terms or {}
    return {
        "epoch": epoch,
        "train_total": terms.get("total", math.nan),
        "train_cd": terms.get("cd", math.nan),
        "train_sym": terms.get("sym", math.nan),
        "train_sparsity": terms.get("sparsity", math.nan),
        "train_diversity": terms.get("diversity", math.nan),
        "val_cd": val,
        "alpha": float(model.quantizer.alpha.data),
    }


HISTORY_FIELDS = ["epoch", "train_total", "train_cd", "train_sym", "train_sparsity",
                  "train_diversity", "val_cd", "alpha"]


# checkpoints --------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: TransmissionModel, tcfg: TrainConfig | None = None,
                    opt: Adam | None = None, state: TrainState | None = None) -> None:
    """Write an ``.npz`` container: named parameter arrays plus a JSON ``meta`` record.

    Array names: ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>``,
    ``best/<name>``. ``meta`` holds the format tag, model/train configs,
    their digest, epoch, Adam step count and early-stopping state.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [n for n, _ in model.named_parameters()]
    arrays = {f"param/{n}": a for n, a in model.state_dict().items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model": model.cfg.to_dict(),
        "train": asdict(tcfg) if tcfg else None,
        "digest": config_digest(model.cfg, *( [tcfg] if tcfg else [])),
        "rng": {"algorithm": "PCG64", "derivation": "default_rng([seed, epoch])",
                "seed": tcfg.seed if tcfg else None},
    }
    if opt is not None:
        for n, m, v in zip(names, opt.state["m"], opt.state["v"]):
            arrays[f"adam_m/{n}"] = m
            arrays[f"adam_v/{n}"] = v
        meta["adam_t"] = opt.state["t"]
    if state is not None:
        meta["state"] = {k: getattr(state, k) for k in
                         ("epoch", "best_val", "best_epoch", "bad_epochs", "history", "stopped_early")}
        if state.best_params is not None:
            arrays.update({f"best/{n}": a for n, a in state.best_params.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path):
    """Returns ``(model, train_config | None, optimizer | None, state | None)``."""
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        cfg = ModelConfig(**meta["model"])
        model = TransmissionModel(cfg)
        model.load_state_dict({k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")})
        tcfg = TrainConfig(**meta["train"]) if meta.get("train") else None
        opt = None
        if "adam_t" in meta and tcfg is not None:
            opt = Adam(model.parameters(), tcfg.learning_rate, tcfg.weight_decay,
                       (tcfg.beta1, tcfg.beta2), tcfg.adam_eps)
            names = [n for n, _ in model.named_parameters()]
            opt.state = {"m": [z[f"adam_m/{n}"].copy() for n in names],
                         "v": [z[f"adam_v/{n}"].copy() for n in names], "t": meta["adam_t"]}
        state = None
        if "state" in meta:
            best = {k[len("best/"):]: z[k].copy() for k in z.files if k.startswith("best/")}
            state = TrainState(best_params=best or None, **meta["state"])
    return model, tcfg, opt, state


def copy_model(model: TransmissionModel) -> TransmissionModel:
    return copy.deepcopy(model)
