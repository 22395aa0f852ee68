"""``spikecloud`` command line: one executable, one subcommand per pipeline stage.

Settings come from defaults, then ``--config FILE``, then ``--set key=value``
overrides, then dedicated flags such as ``--seed``. The effective settings are
written to ``<out>/config.resolved``, which can be passed back as ``--config``
to replay the run. Every artifact goes under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Settings, load_config
from .errors import SpikeCloudError, UsageError

log = logging.getLogger("spikecloud")

SUBCOMMANDS = ("gen-data", "preprocess", "encode-stats", "train", "eval", "energy", "gradcheck", "ablate")


# --------------------------------------------------------------------------- #
# helpers
# --------------------------------------------------------------------------- #
def _resolve(args) -> Settings:
    s = load_config(args.config) if args.config else Settings.defaults()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        s.set(key.strip(), value)
    if args.seed is not None:
        s.set("seed", args.seed)
    if args.grouping_variant is not None:
        s.set("group.variant", args.grouping_variant)
    if getattr(args, "epochs", None) is not None:
        s.set("train.max_epochs", args.epochs)
    return s


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_streams(s: Settings, data_dir: str | None):
    """Streams from a ``gen-data`` directory, or freshly synthesized."""
    from .events import read_event_file
    from .synth import synth_generate

    if data_dir is None:
        return synth_generate(s.synth_spec(), s["seed"])
    root = Path(data_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise UsageError(f"{manifest} not found; point --data at a gen-data output directory")
    streams = []
    for rec in json.loads(manifest.read_text()):
        st = read_event_file(root / rec["path"])
        st.label = int(rec["label"])
        streams.append(st)
    return streams


def _cache(s: Settings, data_dir: str | None):
    from .ablation import DataCache

    return DataCache(_load_streams(s, data_dir) if data_dir else None)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #
def cmd_gen_data(args, s: Settings, out: Path) -> int:
    from .events import write_events
    from .synth import synth_generate
    from .training import split_streams

    spec = s.synth_spec()
    streams = synth_generate(spec, s["seed"])
    data = out / "data"
    data.mkdir(exist_ok=True)
    ext = "evs" if args.format == "packed" else "csv"
    _, test = split_streams([st.label for st in streams], s["data.test_fraction"], s["seed"])
    test = set(test.tolist())
    records = []
    for i, st in enumerate(streams):
        name = f"stream_{i:04d}.{ext}"
        (data / name).write_bytes(write_events(st, args.format))
        records.append({"path": name, "label": int(st.label), "class": spec.classes[st.label],
                        "split": "test" if i in test else "train", "events": len(st)})
    _write_json(data / "manifest.json", records)
    print(f"wrote {len(streams)} streams to {data}")
    return 0


def cmd_preprocess(args, s: Settings, out: Path) -> int:
    from .checkpoint import save_grouped
    from .training import preprocess_stream

    streams = _load_streams(s, args.data)
    cfg = s.net_config(max(int(st.label) for st in streams) + 1)
    wcfg = s.window_config()
    grouped, labels, owners = [], [], []
    for sid, st in enumerate(streams):
        for g in preprocess_stream(st, wcfg, cfg, s["seed"], sid):
            grouped.append(g)
            labels.append(int(st.label))
            owners.append(sid)
    save_grouped(grouped, out / "grouped.spkc", labels, {"streams": owners, "config": cfg.to_dict()})
    with (out / "group_stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "stream", "label", "sd", "mean_channel1"])
        for i, (g, sid, lab) in enumerate(zip(grouped, owners, labels)):
            w.writerow([i, sid, lab, repr(g.sd), repr(float(g.channel1[..., :3].mean()))])
    print(f"grouped {len(grouped)} windows from {len(streams)} streams")
    return 0


def cmd_encode_stats(args, s: Settings, out: Path) -> int:
    from .coding import coding_report

    rng = np.random.default_rng(s["seed"])
    distances = np.abs(rng.normal(0.0, args.sd, size=(args.groups, 3)))
    rep = coding_report(distances, args.sd, T=s["net.T"], seed=s["seed"])
    with (out / "encode_stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in rep.rows():
            w.writerow([name, repr(float(value))])
            print(f"{name}: {value:.6g}")
    return 0


def cmd_train(args, s: Settings, out: Path) -> int:
    from .ablation import run_experiment
    from .checkpoint import save_checkpoint
    from .training import config_snapshot, metrics_to_csv

    exp = run_experiment(s, _cache(s, args.data), log=lambda r: log.info("%s", r))
    res = exp.result
    (out / "metrics.csv").write_text(metrics_to_csv(res.metrics))
    final = {"stream_accuracy": exp.stream_accuracy, "window_accuracy": exp.evaluation.accuracy,
             "test_loss": exp.evaluation.loss}
    tcfg = s.train_config()
    save_checkpoint(res.net, out / "checkpoint.spkc", epoch=res.epochs, metrics=final,
                    extra={"optimizer": tcfg.optimizer_header(),
                           "snapshot": config_snapshot(res.net.cfg, tcfg, s.window_config())})
    print(f"trained {res.epochs} epochs; stream accuracy {exp.stream_accuracy:.4f}, "
          f"window accuracy {exp.evaluation.accuracy:.4f}")
    return 0


def cmd_eval(args, s: Settings, out: Path) -> int:
    from .checkpoint import load_checkpoint
    from .training import evaluate_stream

    net, _ = load_checkpoint(args.checkpoint)
    streams = _load_streams(s, args.data)
    if args.all:
        ids = list(range(len(streams)))
    else:
        from .training import split_streams

        _, ids = split_streams([int(st.label) for st in streams], s["data.test_fraction"], s["seed"])
    wcfg = s.window_config()
    correct = 0
    with (out / "eval.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream", "label", "predicted"])
        for sid in ids:
            pred = evaluate_stream(net, streams[sid], wcfg, s["seed"], int(sid))
            correct += int(pred == streams[sid].label)
            w.writerow([int(sid), streams[sid].label, pred])
    acc = correct / len(ids)
    _write_json(out / "eval.json", {"streams": len(ids), "stream_accuracy": acc})
    print(f"stream accuracy {acc:.4f} over {len(ids)} streams")
    return 0


def cmd_energy(args, s: Settings, out: Path) -> int:
    from .checkpoint import load_checkpoint
    from .energy import (EnergyConstants, calibrate_bit_seconds, report,
                         static_energy_calibrated)
    from .training import build_network, eval_seeds, preprocess_stream
    from .snn.network import SampleBatch

    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
    else:
        net = build_network(s.net_config(), s["seed"])
    streams = _load_streams(s, args.data)
    grouped, owners = [], []
    for sid, st in enumerate(streams):
        g = preprocess_stream(st, s.window_config(), net.cfg, s["seed"], sid)
        grouped.extend(g)
        owners.extend([sid] * len(g))
        if len(grouped) >= s["energy.samples"]:
            break
    n = s["energy.samples"]
    batch = SampleBatch.from_grouped(grouped[:n])
    constants = EnergyConstants(s["energy.e_mac"], s["energy.e_ac"], s["energy.spp_bit"],
                                s["energy.bits_per_param"], s["energy.l_sample_s"])
    rep = report(net, batch, constants, eval_seeds(s["seed"], owners[:n]))
    doc = rep.to_dict()
    if args.reference_params is not None and args.reference_static_j is not None:
        k = calibrate_bit_seconds(args.reference_params, args.reference_static_j, constants.spp_bit)
        doc["calibration"] = {
            "reference_params": args.reference_params,
            "reference_static_j": args.reference_static_j,
            "bit_seconds_per_param": k,
            "static_j": static_energy_calibrated(rep.params, k, constants.spp_bit),
        }
    _write_json(out / "energy.json", doc)
    (out / "energy.csv").write_text(rep.to_csv())
    print(f"params {rep.params}, SOPs {rep.sops:.4g}, dynamic {rep.dynamic_j:.4g} J, "
          f"static {rep.static_j:.4g} J")
    return 0


def cmd_gradcheck(args, s: Settings, out: Path) -> int:
    from .gradcheck import run_gradcheck

    rep = run_gradcheck(seed=s["seed"])
    lines = rep.lines()
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "gradcheck.json", {
        "surrogate_max_abs_err": rep.surrogate_max_abs_err,
        "rel_errors": rep.rel_errors,
        "fused_max_abs_diff": rep.fused_max_abs_diff,
        "max_rel_error": rep.max_rel_error,
        "passed": rep.passed(),
    })
    print("\n".join(lines))
    return 0 if rep.passed() else 1


def cmd_ablate(args, s: Settings, out: Path) -> int:
    from .ablation import ablate, ablation_csv, suite_variants

    suite_variants(args.suite)  # fail fast on a bad name
    rows = ablate(args.suite, s, cache=_cache(s, args.data), log=log.info)
    path = out / f"ablation_{args.suite}.csv"
    path.write_text(ablation_csv(rows))
    for r in rows:
        print(f"{r['variant']}: {r['accuracy']:.4f}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "preprocess": cmd_preprocess,
    "encode-stats": cmd_encode_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "energy": cmd_energy,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--grouping-variant", metavar="NAME",
                        help="grouping table row, e.g. row6 or abs-min-double-add")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="spikecloud", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="synthesize labelled event streams")
    p.add_argument("--format", choices=("packed", "csv"), default="packed")

    p = sub.add_parser("preprocess", parents=[common], help="window, sample and group streams")
    p.add_argument("--data", help="gen-data directory (default: synthesize)")

    p = sub.add_parser("encode-stats", parents=[common], help="rate-coding error statistics")
    p.add_argument("--sd", type=float, default=0.052, help="offset scale of the synthetic groups")
    p.add_argument("--groups", type=int, default=20_000, help="number of synthetic offsets")

    p = sub.add_parser("train", parents=[common], help="train and checkpoint a network")
    p.add_argument("--data", help="gen-data directory (default: synthesize)")
    p.add_argument("--epochs", type=int, help="sets train.max_epochs")

    p = sub.add_parser("eval", parents=[common], help="stream-level voted evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="gen-data directory (default: synthesize)")
    p.add_argument("--all", action="store_true", help="score every stream, not just the test split")

    p = sub.add_parser("energy", parents=[common], help="operation counts and energy report")
    p.add_argument("--checkpoint", help="trained network (default: freshly initialised)")
    p.add_argument("--data", help="gen-data directory (default: synthesize)")
    p.add_argument("--reference-params", type=float, help="calibration reference parameter count")
    p.add_argument("--reference-static-j", type=float, help="calibration reference static energy (J)")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")

    p = sub.add_parser("ablate", parents=[common], help="run an ablation suite")
    p.add_argument("--suite", required=True, choices=("timestep", "grouping", "structure", "resf"))
    p.add_argument("--data", help="gen-data directory (default: synthesize)")
    p.add_argument("--epochs", type=int, help="sets train.max_epochs")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        s = _resolve(args)
        out = _out_dir(args)
        (out / "config.resolved").write_text(s.to_text())
        return COMMANDS[args.command](args, s, out)
    except (SpikeCloudError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
