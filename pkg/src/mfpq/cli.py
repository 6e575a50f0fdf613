"""Command-line entry point: ``mfpq {train,verify,bench,report-memory,stats}``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 verification
failure. ``MFPQ_SEED`` supplies the seed when ``--seed`` is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import analysis
from .io import FormatError, atomic_write, gen_synthetic, load_checkpoint, load_idx, RateEncoder, save_checkpoint
from .network import MFPNetwork
from .neurons import NeuronConfig, TemporalMixMatrix
from .training import Dataset, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

VERIFY_MODES = {"streaming": "streaming", "folded-diag": "folded-diagonal", "folded-rowsum": "folded-rowsum"}

TRAIN_KEYS = {"lr", "momentum", "epochs", "batch", "seed", "loss", "surrogate_width", "ste_clip"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("MFPQ_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MFPQ_SEED must be an integer, got {env!r}") from None


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out, text.encode("utf-8"))


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what} {path} is not valid JSON: {exc}") from None


def _field(cfg: dict, key: str, kind, what="config"):
    if key not in cfg:
        raise FormatError(f"{what} is missing field {key!r}")
    value = cfg[key]
    if kind is int and not (isinstance(value, int) and not isinstance(value, bool)):
        raise FormatError(f"{what} field {key!r} must be an integer, got {value!r}")
    if kind is list and not isinstance(value, list):
        raise FormatError(f"{what} field {key!r} must be a list, got {value!r}")
    return value


def _load_dataset(data_cfg: dict, t_steps: int, seed: int, n_classes: int) -> Dataset:
    kind = data_cfg.get("kind", "synthetic")
    if kind == "synthetic":
        return gen_synthetic(
            dims=_field(data_cfg, "dims", int, "data"),
            count=_field(data_cfg, "count", int, "data"),
            seed=data_cfg.get("seed", seed),
            t_steps=t_steps,
            sigma=data_cfg.get("sigma", 0.08),
        )
    if kind == "idx":
        images, labels = load_idx(data_cfg["images"], data_cfg["labels"], num_classes=n_classes)
        flat = images.reshape(len(images), -1)
        spikes = RateEncoder(t_steps, seed).encode(flat)
        return Dataset(spikes, labels)
    raise FormatError(f"data field 'kind' must be 'synthetic' or 'idx', got {kind!r}")


def cmd_train(args) -> int:
    cfg = _read_json(args.config, "config")
    sizes = _field(cfg, "arch", list)
    t_steps = _field(cfg, "T", int)
    train_kwargs = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    train_kwargs["seed"] = _seed(args.seed if args.seed is not None else cfg.get("seed"))
    unknown = set(cfg) - TRAIN_KEYS - {"arch", "T", "neuron", "data", "tau0"}
    if unknown:
        raise FormatError(f"config has unknown field {sorted(unknown)[0]!r}")
    try:
        tcfg = TrainConfig(**train_kwargs)
        ncfg = NeuronConfig(**cfg.get("neuron", {}))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"config: {exc}") from None
    net = MFPNetwork.init(sizes, t_steps, ncfg, seed=tcfg.seed, tau0=cfg.get("tau0", 0.5))
    data_cfg = {"kind": "synthetic", "count": 256, **cfg.get("data", {})}
    data_cfg.setdefault("dims", sizes[0])
    data = _load_dataset(data_cfg, t_steps, tcfg.seed, net.n_classes)
    net, metrics = train(net, data, tcfg)
    save_checkpoint(net, args.out)
    rows = [[m["epoch"], m["split"], f"{m['loss']:.6f}", f"{m['accuracy']:.6f}", f"{m['wall_ms']:.1f}"]
            for m in metrics]
    text = analysis.write_csv(["epoch", "split", "loss", "accuracy", "wall_ms"], rows)
    if args.metrics:
        atomic_write(args.metrics, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    net = load_checkpoint(args.ckpt)
    mode = VERIFY_MODES[args.mode]
    mismatches, first = analysis.verify_network(net, mode, args.trials, _seed(args.seed), batch=args.batch)
    lines = [f"mode={args.mode} trials={args.trials} mismatches={mismatches} "
             f"divergence_rate={mismatches / max(args.trials, 1):.6f}"]
    if first is not None:
        lines.append("first counterexample: " + json.dumps(first, sort_keys=True))
    _emit("\n".join(lines) + "\n", args.out)
    if mode == "streaming" and mismatches:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_bench(args) -> int:
    net = load_checkpoint(args.ckpt)
    if args.T is not None and args.T != net.t_steps:
        # mixing matrices are T x T; rebuild them LIF-like at the requested order
        for layer in net.layers:
            layer.mix = TemporalMixMatrix.lif_like(args.T, dtype=net.dtype)
        net.t_steps = args.T
    res = analysis.bench_parallel_vs_serial(net, net.t_steps, args.batch, args.repeats, seed=_seed(args.seed))
    _emit(analysis.write_csv(analysis.BENCH_CSV_HEADER, [res.csv_row()]), args.out)
    return EXIT_OK


def cmd_report_memory(args) -> int:
    arch = _read_json(args.arch, "architecture")
    if isinstance(arch, dict):
        arch = _field(arch, "arch", list, "architecture")
    try:
        reports = [analysis.account_memory(arch, s, args.T) for s in analysis.SCHEMES]
    except (ValueError, TypeError, KeyError) as exc:
        raise FormatError(f"architecture: {exc}") from None
    if args.format == "csv":
        rows = [r for rep in reports for r in rep.csv_rows()]
        text = analysis.write_csv(analysis.MEMORY_CSV_HEADER, rows)
    else:
        text = "\n\n".join(rep.to_text() for rep in reports)
        text += f"\n\nratio fp32-lif / mfp-binary = {reports[1].ratio:.4f}x\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    net = load_checkpoint(args.ckpt)
    data = gen_synthetic(net.sizes[0], args.samples, seed=_seed(args.seed), t_steps=net.t_steps)
    rows = []
    for bits in args.bits:
        st = analysis.contribution_stats(net, data.spikes, bits)
        rows.append([bits, args.samples, f"{st.history_fraction:.6f}",
                     f"{float(st.history_mean.mean()):.6f}", f"{float(st.input_mean.mean()):.6f}"])
    header = ["membrane_bits", "samples", "history_fraction", "mean_abs_history", "mean_abs_input"]
    _emit(analysis.write_csv(header, rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfpq", description="Memory-free parallel quantized spiking networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="CSV path for per-epoch metrics (default stdout)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="check serial inference against the parallel forward")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--mode", choices=sorted(VERIFY_MODES), default="streaming")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--batch", type=int, default=1)
    v.add_argument("--seed", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time parallel against streaming forward")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--T", type=int)
    b.add_argument("--batch", type=int, default=128)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report-memory", help="closed-form memory for fp32 LIF and MFP binary")
    r.add_argument("--arch", required=True, help="JSON list of layer sizes or [fan_in, fan_out] pairs")
    r.add_argument("--T", type=int, required=True)
    r.add_argument("--format", choices=("text", "csv"), default="text")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report_memory)

    s = sub.add_parser("stats", help="history vs input contribution per membrane bit-width")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--bits", type=int, nargs="+", default=[8, 4, 2])
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mfpq: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"mfpq: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
