"""Command-line entry point: ``pcjscc {train,transmit,evaluate,sweep,ablate,sscc}``.

Exit codes: 0 success, 2 configuration or usage error, 3 input/output error,
4 decode failure (SSCC trials that could not be reconstructed), 5 training
diverged. The default ``--seed`` comes from the ``PCJSCC_SEED`` environment
variable (0 when unset). Every command that writes results also writes a
JSON manifest ``<output>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .channel import Channel
from .data import prepare, toy_dataset
from .experiments import (SWEEP_AXES, VARIANTS, offset_spread, score, sweep, train_run, trial_rng,
                          variant_config)
from .metrics import CSV_FIELDS, auto_peak, distortion
from .pointcloud import DegenerateExtentError, PlyError, PointCloud, load_ply, save_ply
from .sscc import SsccConfig, sscc_transmit
from .stf import budget
from .trainer import HISTORY_FIELDS, TrainingDiverged, load_checkpoint, save_checkpoint

log = logging.getLogger("pcjscc")

SEED_ENV = "PCJSCC_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DECODE, EXIT_DIVERGED = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# manifests / output ----------------------------------------------------------

def artifact_version() -> str:
    """Package version plus a digest of its source files."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_digest: str
    seed: int
    version: str
    outputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    wall_clock_s: float = 0.0
    summary: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_csv(path: str | Path | None, fields, rows) -> Path | None:
    """Write rows to ``path`` (or stdout for ``None``/``-``). Floats use shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else r[k]) for k in fields})
    if path is None or str(path) == "-":
        sys.stdout.write(buf.getvalue())
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def finish(args, outputs: list[Path | None], digest: str, started: float, summary: dict | None = None,
           manifest_path: Path | None = None) -> None:
    outputs = [p for p in outputs if p is not None]
    if not outputs and manifest_path is None:
        return
    m = RunManifest(args.command, list(args.argv), digest, args.seed, artifact_version(),
                    {str(p): sha256_file(p) for p in outputs}, round(time.time() - started, 3), summary or {})
    target = manifest_path or outputs[0].with_name(outputs[0].name + ".manifest.json")
    m.write(target)


# shared argument groups ------------------------------------------------------

def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_CONFIG) from None


def snr_value(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if math.isnan(v) or v == -math.inf:
        raise argparse.ArgumentTypeError(f"SNR must be a number or inf, got {text!r}")
    return v


def float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def add_channel_args(p: argparse.ArgumentParser, snr_default: float = 10.0) -> None:
    g = p.add_argument_group("channel")
    g.add_argument("--channel", choices=("awgn", "rayleigh"), default="awgn", help="channel model (default awgn)")
    g.add_argument("--snr-db", type=snr_value, default=snr_default,
                   help=f"channel SNR in dB; 'inf' disables noise (default {snr_default:g})")
    g.add_argument("--snr-offset", type=float, default=0.0,
                   help="offset in dB added to the SNR the decoder is told (default 0)")
    g.add_argument("--csi-equalize", action="store_true", help="divide Rayleigh outputs by the known fading gain")


LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    # also accepted after the command name
    p.add_argument("--log-level", choices=LOG_LEVELS, default=argparse.SUPPRESS, help="logging verbosity")


def add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--input", nargs="+", metavar="PLY", help="input point clouds")
    g.add_argument("--toy", type=int, metavar="COUNT", help="use COUNT synthetic shapes (seeded by --data-seed)")
    p.add_argument("--data-seed", type=int, default=1, help="seed of the synthetic shapes for --toy (default 1)")


def channel_from(args) -> Channel:
    return Channel(args.channel, args.snr_db, args.snr_offset, args.csi_equalize)


def load_clouds(args, n: int) -> tuple[np.ndarray, list[str], list[PointCloud]]:
    """(B, N, 3) unit-cube clouds plus names and the prepared clouds (for undoing normalisation)."""
    if args.input:
        prepared = [prepare(load_ply(p), n) for p in args.input]
        return np.stack([c.points for c in prepared]), list(args.input), prepared
    count = args.toy if args.toy is not None else 8
    ds = toy_dataset(count, n, args.data_seed)
    return ds.points, [f"toy{i}:{lab}" for i, lab in enumerate(ds.labels)], [PointCloud(p) for p in ds.points]


def load_model(path: str):
    try:
        model, *_ = load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}", EXIT_IO) from None
    return model


# commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    started = time.time()
    cfg = C.load(args.config) if args.config else C.RunConfig()
    flat = dict(C.parse_override(s) for s in args.set or [])
    if args.points is not None:
        flat["data.points"] = args.points
    if args.epochs is not None:
        flat["train.max_epochs"] = args.epochs
    if args.seed_given:
        flat["train.seed"] = args.seed
    cfg = C.from_flat(flat, cfg)
    args.seed = cfg.train.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(C.dumps(cfg))
    model, history, _, _ = train_run(cfg, checkpoint_dir=out if args.checkpoint_every_epoch else None)
    save_checkpoint(out / "model.npz", model, cfg.train)
    hist = write_csv(out / "history.csv", HISTORY_FIELDS, history)
    best = min(history, key=lambda r: r["val_cd"])
    summary = {"epochs_run": history[-1]["epoch"], "val_cd_epoch0": history[0]["val_cd"],
               "best_val_cd": best["val_cd"], "best_epoch": best["epoch"], "config": cfg.to_dict()}
    finish(args, [hist, out / "model.npz", out / "config.toml"], digest_of(cfg.to_dict()), started, summary,
           out / "manifest.json")
    log.info("trained %d epochs; val Chamfer %.5g -> %.5g", history[-1]["epoch"], history[0]["val_cd"],
             best["val_cd"])
    return EXIT_OK


TRANSMIT_FIELDS = ["input", "channel", "snr_db", "snr_offset", "K", "cbr", "bpp"] + CSV_FIELDS


def cmd_transmit(args) -> int:
    started = time.time()
    model = load_model(args.model)
    cfg = model.cfg
    if args.points is not None and args.points != cfg.points:
        raise CliError(f"--points {args.points} does not match the model's N={cfg.points}", EXIT_CONFIG)
    k = cfg.keep_tokens if args.K is None else args.K
    if not 1 <= k <= cfg.tokens:
        raise CliError(f"-K {k} outside [1, T={cfg.tokens}]", EXIT_CONFIG)
    pc = prepare(load_ply(args.input), cfg.points)
    reps, x_hat = score(model, pc.points[None], channel_from(args), trial_rng(args.seed, 0), k)
    rec = PointCloud(x_hat[0], offset=pc.offset, scale=pc.scale)
    out_ply = Path(args.output)
    out_ply.parent.mkdir(parents=True, exist_ok=True)
    save_ply(rec.denormalized(), out_ply, binary=not args.ascii)
    b = budget(k, cfg.dim, cfg.points, cfg.bits)
    row = {"input": args.input, "channel": args.channel, "snr_db": args.snr_db, "snr_offset": args.snr_offset,
           "K": k, "cbr": float(b.cbr), "bpp": float(b.bpp), **reps[0].as_row()}
    csv_path = write_csv(args.metrics, TRANSMIT_FIELDS, [row])
    finish(args, [csv_path, out_ply], digest_of(cfg.to_dict()), started)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    ref, rec = load_ply(args.ref), load_ply(args.rec)
    if args.peak == "auto":
        peak = auto_peak(ref.points)
    else:
        try:
            peak = float(args.peak)
        except ValueError:
            raise CliError(f"--peak must be 'auto' or a number, got {args.peak!r}", EXIT_CONFIG) from None
    rep = distortion(ref.points, rec.points, peak=peak, k=args.normal_k)
    path = write_csv(args.out, CSV_FIELDS, [rep.as_row()])
    finish(args, [path], digest_of({"peak": peak, "k": args.normal_k}), started)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    model = load_model(args.model)
    points, _, _ = load_clouds(args, model.cfg.points)
    grid = args.grid
    if args.axis == "cbr":
        grid = [int(v) for v in grid]
    rows = sweep(model, points, args.axis, grid, args.trials, args.seed, channel_from(args), args.K)
    path = write_csv(args.out, [*rows[0].FIELDS], [r.as_row() for r in rows])
    summary = {"all_finite": all(math.isfinite(r.d1_psnr) for r in rows),
               "monotone": all(r.monotone for r in rows)}
    if args.axis == "offset":
        summary["d1_spread_db"] = offset_spread(rows)
        log.info("D1 spread across offsets: %.4f dB", summary["d1_spread_db"])
    finish(args, [path], digest_of({"model": model.cfg.to_dict(), "axis": args.axis, "grid": grid}), started,
           summary)
    return EXIT_OK


ABLATE_FIELDS = ["variant", "snr_db", "trials", "clouds", "lambda_sym", "lambda_sparsity", "lambda_diversity",
                 "d1_psnr", "d2_psnr"]


def cmd_ablate(args) -> int:
    started = time.time()
    base = C.load(args.config) if args.config else C.RunConfig()
    base = C.from_flat(dict(C.parse_override(s) for s in args.set or []), base)
    root = Path(args.checkpoints)
    models = {}
    for name in args.variants:
        vcfg = variant_config(base, name)
        ckpt = root / name / "model.npz"
        if args.retrain:
            model, history, _, _ = train_run(vcfg)
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, model, vcfg.train)
            write_csv(ckpt.parent / "history.csv", HISTORY_FIELDS, history)
        elif not ckpt.exists():
            cfg_flag = f" --config {args.config}" if args.config else ""
            raise CliError(f"missing checkpoint {ckpt} for variant {name!r}; train it with "
                           f"'pcjscc ablate --retrain --variants {name} --checkpoints {root}{cfg_flag}'", EXIT_IO)
        else:
            model = load_model(str(ckpt))
        models[name] = (model, vcfg)
    n = next(iter(models.values()))[0].cfg.points
    points, _, _ = load_clouds(args, n)
    ch = channel_from(args)
    rows = []
    for name, (model, vcfg) in models.items():
        d1, d2 = [], []
        for t in range(args.trials):
            reps, _ = score(model, points, ch, trial_rng(args.seed, t))
            d1 += [r.d1_psnr for r in reps]
            d2 += [r.d2_psnr for r in reps]
        rows.append({"variant": name, "snr_db": args.snr_db, "trials": args.trials, "clouds": len(points),
                     "lambda_sym": vcfg.train.lambda_sym, "lambda_sparsity": vcfg.train.lambda_sparsity,
                     "lambda_diversity": vcfg.train.lambda_diversity,
                     "d1_psnr": float(np.mean(d1)), "d2_psnr": float(np.mean(d2))})
    path = write_csv(args.out, ABLATE_FIELDS, rows)
    summary = {"variants": {name: variant_config(base, name).to_dict() for name in models}}
    finish(args, [path], digest_of(base.to_dict()), started, summary)
    return EXIT_OK


SSCC_FIELDS = ["input", "trial", "snr_db", "depth", "ldpc", "modulation", "channel", "status", "ber",
               "codewords", "unconverged", "stream_bytes", "d1_psnr", "d2_psnr"]


def cmd_sscc(args) -> int:
    started = time.time()
    scfg = SsccConfig(args.depth, args.ldpc, args.mod, args.iterations, args.channel, args.llr)
    points, names, _ = load_clouds(args, args.points)
    rows, failures = [], 0
    for snr in args.snr_db:
        for ci, (pts, name) in enumerate(zip(points, names)):
            for t in range(args.trials):
                res = sscc_transmit(pts, scfg, snr, np.random.default_rng([args.seed, ci, t]))
                rep = distortion(pts, res.points) if res.ok else None
                failures += not res.ok
                rows.append({"input": name, "trial": t, "snr_db": snr, "depth": scfg.depth, "ldpc": scfg.ldpc,
                             "modulation": scfg.modulation, "channel": scfg.channel, "status": res.status,
                             "ber": res.ber, "codewords": res.codewords, "unconverged": res.unconverged,
                             "stream_bytes": res.stream_bytes,
                             "d1_psnr": rep.d1_psnr if rep else None, "d2_psnr": rep.d2_psnr if rep else None})
    path = write_csv(args.out, SSCC_FIELDS, rows)
    finish(args, [path], digest_of(asdict(scfg)), started, {"failures": failures, "trials": len(rows)})
    return EXIT_DECODE if failures else EXIT_OK


# parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pcjscc",
        description="Learned point-cloud transmission over noisy channels, with an LDPC/QAM baseline.",
        epilog=f"Exit codes: 0 ok, 2 config/usage, 3 I/O, 4 decode failure, 5 training diverged. "
               f"${SEED_ENV} sets the default --seed.")
    p.add_argument("--log-level", default="WARNING", choices=LOG_LEVELS)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", help="train a model from a config file",
                       description="Train with the channel in the loop; writes model.npz, history.csv, "
                                   "config.toml and manifest.json into --out.")
    t.add_argument("--config", help="flat key = value TOML config (see docs for keys)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--points", type=int, help="points per cloud N (FPS target); same as data.points")
    t.add_argument("--epochs", type=int, help="override train.max_epochs")
    t.add_argument("--checkpoint-every-epoch", action="store_true", help="also keep a resumable last.npz")
    add_seed(t)
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transmit", help="send one PLY cloud through a trained model",
                       description="Encode, filter to the top-K tokens, quantise, send, decode; writes the "
                                   "reconstruction (input coordinates) and a metrics CSV row.")
    x.add_argument("--model", required=True, help="checkpoint (model.npz)")
    x.add_argument("--input", required=True, help="input PLY")
    x.add_argument("--output", required=True, help="reconstructed PLY")
    x.add_argument("--metrics", default="-", help="metrics CSV path (default stdout)")
    x.add_argument("-K", "--K", type=int, help="tokens to transmit (default payload.K of the model)")
    x.add_argument("--points", type=int, help="FPS target; must equal the model's N")
    x.add_argument("--ascii", action="store_true", help="write an ASCII PLY")
    add_channel_args(x)
    add_seed(x)
    x.set_defaults(func=cmd_transmit)

    e = sub.add_parser("evaluate", help="D1/D2 PSNR between two PLY clouds")
    e.add_argument("--ref", required=True, help="reference PLY")
    e.add_argument("--rec", required=True, help="reconstructed PLY")
    e.add_argument("--peak", default="auto", help="'auto' (reference bounding-box diagonal) or a number")
    e.add_argument("--normal-k", type=int, default=12, help="neighbours for normal estimation (default 12)")
    e.add_argument("--out", default="-", help="CSV path (default stdout)")
    add_seed(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="average D1/D2 over a grid of SNR, CBR (K) or SNR-estimate offset")
    s.add_argument("--model", required=True, help="checkpoint (model.npz)")
    s.add_argument("--axis", choices=SWEEP_AXES, required=True, help="quantity varied by --grid")
    s.add_argument("--grid", type=float_list, required=True, help="comma-separated grid values")
    s.add_argument("--trials", type=int, default=1, help="channel draws per grid point (default 1)")
    s.add_argument("-K", "--K", type=int, help="tokens to transmit for snr/offset sweeps")
    s.add_argument("--out", default="-", help="CSV path (default stdout)")
    add_inputs(s)
    add_channel_args(s)
    add_seed(s)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="compare decoder-stage and loss-term variants",
                       description=f"Variants: {', '.join(VARIANTS)}. Checkpoints are read from "
                                   "CHECKPOINTS/<variant>/model.npz, or trained there with --retrain.")
    a.add_argument("--variants", type=lambda v: [x for x in v.split(",") if x],
                   default=["none", "transformer", "upsample", "residual", "coarse-only"],
                   help="comma-separated variant names")
    a.add_argument("--checkpoints", required=True, help="directory of per-variant checkpoints")
    a.add_argument("--retrain", action="store_true", help="train each variant from --config first")
    a.add_argument("--config", help="base config for --retrain")
    a.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a base config key")
    a.add_argument("--trials", type=int, default=1, help="channel draws (default 1)")
    a.add_argument("--out", default="-", help="CSV path (default stdout)")
    add_inputs(a)
    add_channel_args(a, snr_default=-20.0)
    add_seed(a)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("sscc", help="octree + LDPC + QAM/BPSK baseline trials",
                       description="SNR is Eb/N0 per coded bit. A trial whose LDPC words do not all converge "
                                   "or whose octree stream is malformed is a decode failure (exit code 4).")
    b.add_argument("--depth", type=int, default=8, help="octree depth (default 8)")
    b.add_argument("--ldpc", type=int, choices=(648, 1200), default=648, help="code length (default 648)")
    b.add_argument("--mod", choices=("qam16", "bpsk"), help="modulation (default: qam16 for 648, bpsk for 1200)")
    b.add_argument("--iterations", type=int, help="BP iterations (default: 20 for 648, 80 for 1200)")
    b.add_argument("--llr", choices=("exact", "maxlog"), default="exact", help="LLR computation")
    b.add_argument("--channel", choices=("awgn", "rayleigh"), default="awgn", help="block-fading channel")
    b.add_argument("--snr-db", type=float_list, default=[10.0], help="Eb/N0 value(s) in dB, comma-separated")
    b.add_argument("--trials", type=int, default=1, help="trials per cloud and SNR (default 1)")
    b.add_argument("--points", type=int, default=2048, help="FPS target per cloud (default 2048)")
    b.add_argument("--out", default="-", help="CSV path (default stdout)")
    add_inputs(b)
    add_seed(b)
    b.set_defaults(func=cmd_sscc)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        args.seed_given = args.seed is not None or bool(os.environ.get(SEED_ENV))
        if args.seed is None:
            args.seed = default_seed()
        return args.func(args)
    except CliError as e:
        print(f"pcjscc {args.command}: {e}", file=sys.stderr)
        return e.code
    except C.ConfigError as e:
        print(f"pcjscc {args.command}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlyError, OSError) as e:
        print(f"pcjscc {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as e:
        print(f"pcjscc {args.command}: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, DegenerateExtentError) as e:
        print(f"pcjscc {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
