"""Command-line entry points: dataset synthesis, training, evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every artifact
(checkpoint, report) embeds the resolved run configuration and seed, and
`train --from-manifest` reruns a checkpoint's configuration from scratch.
Metrics stream to <out>/metrics.jsonl as line-delimited JSON: one
`phase1_epoch` record per epoch and layer, one `evaluation` record per
fitted head and scope.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as espk
from .errors import EchoSpikeError
from .network import EsppNetwork, LayerSpec, NetworkSpec
from .readout import (
    evaluate,
    fewshot_build,
    load_head,
    lsq_fit,
    save_head,
    train_gd_head,
)
from .rule import EsppConfig

REPORT_FORMAT = "espp-eval-report"

_OVERRIDE_KEYS = (
    "learning_rate", "c_pos", "c_neg", "input_threshold", "beta", "theta",
    "slope", "init_gain",
)


def _default_out() -> str:
    return os.environ.get("ECHOSPIKE_OUT_DIR", ".")


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _espp_config(config: dict) -> EsppConfig:
    preset = espk.load_preset(config["preset"])
    base = espk.preset_espp_config(preset)
    overrides = {k: v for k, v in config.get("overrides", {}).items() if v is not None}
    if overrides:
        from dataclasses import asdict, replace

        base = replace(base, **{k: float(v) for k, v in overrides.items() if k in asdict(base)})
    return base


def _network_spec(config: dict) -> NetworkSpec:
    cfg = _espp_config(config)
    layers = [
        LayerSpec(size=s, recurrent=bool(config.get("recurrent", False)), config=cfg)
        for s in config["layers"]
    ]
    return NetworkSpec(config["input_size"], layers, config["wiring"])


def _config_from_args(args) -> dict:
    layers = [int(s) for s in str(args.layers).split(",") if s.strip()]
    if not layers or any(s < 1 for s in layers):
        raise ValueError(f"--layers must be positive sizes, got {args.layers!r}")
    return {
        "data": args.data,
        "test_data": args.test_data,
        "holdout": args.holdout,
        "preset": args.preset,
        "layers": layers,
        "recurrent": bool(args.recurrent),
        "wiring": args.wiring,
        "epochs": args.epochs,
        "batch": args.batch,
        "seed": args.seed,
        "pairing": args.pairing,
        "p_fix": args.p_fix,
        "augment_shift": args.augment_shift,
        "head": args.head,
        "head_epochs": args.head_epochs,
        "head_lr": args.head_lr,
        "ridge": args.ridge,
        "shots": args.shots,
        "head_split": args.head_split,
        "out": args.out,
        "overrides": {k: getattr(args, k, None) for k in _OVERRIDE_KEYS},
    }


def _load_train_test(config: dict):
    train = espk.load(config["data"])
    if config.get("test_data"):
        test = espk.load(config["test_data"])
        if (test.channels, test.steps) != (train.channels, train.steps):
            raise EchoSpikeError(
                f"test data shape ({test.channels} ch, {test.steps} steps) does not "
                f"match train data ({train.channels} ch, {train.steps} steps)"
            )
    elif config.get("holdout"):
        train, test = train.split(int(config["holdout"]))
    else:
        test = None
    return train, test


class _MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._f.write(json.dumps(record, sort_keys=True) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def run_training(config: dict, resume: str | None = None) -> dict:
    """Phase 1 (+ optional head fit) from a resolved config; returns a summary."""
    out_dir = Path(config.get("out") or _default_out())
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = _load_train_test(config)

    head_split = float(config.get("head_split") or 0.0)
    if head_split > 0.0:
        n_head = max(1, int(round(head_split * len(train_ds))))
        phase1_ds, head_ds = train_ds.split(n_head)
    else:
        phase1_ds, head_ds = train_ds, train_ds

    policy = espk.PairingPolicy(
        mode="natural_shuffle" if config["pairing"] == "natural" else "balanced",
        p_fix=float(config["p_fix"]),
        seed=int(config["seed"]) + 1,
    )

    if resume:
        net, manifest = EsppNetwork.load_checkpoint(resume)
        if manifest.get("rng_state"):
            policy.set_rng_state(manifest["rng_state"])
        done = net.epochs_trained
    else:
        spec = _network_spec({**config, "input_size": train_ds.channels})
        net = EsppNetwork(spec, seed=int(config["seed"]))
        done = 0

    if net.spec.input_size != train_ds.channels:
        raise EchoSpikeError(
            f"checkpoint expects {net.spec.input_size} channels, dataset has "
            f"{train_ds.channels}"
        )

    shift = int(config.get("augment_shift") or 0)
    transform = None
    if shift > 0:
        transform = lambda r: espk.freq_shift_augment(r, shift, policy.rng)  # noqa: E731

    metrics = _MetricsWriter(out_dir / "metrics.jsonl")
    ckpt_stem = out_dir / "checkpoint"

    def on_epoch(epoch, per_layer):
        for li, m in enumerate(per_layer):
            metrics.write({
                "type": "phase1_epoch", "epoch": epoch, "layer": li + 1,
                "firing_rate": m["firing_rate"],
                "gated_fraction": m["gated_fraction"],
                "mean_fix_loss": m["mean_fix_loss"],
                "mean_sac_loss": m["mean_sac_loss"],
            })
        net.save_checkpoint(
            ckpt_stem, run_config=config, rng_state=policy.rng_state()
        )

    remaining = int(config["epochs"]) - done
    if remaining > 0:
        net.train_phase1(
            lambda: espk.pair_stream(phase1_ds, policy, transform),
            epochs=remaining,
            batch_size=int(config.get("batch") or 1),
            on_epoch=on_epoch,
        )
    net.save_checkpoint(ckpt_stem, run_config=config, rng_state=policy.rng_state())

    summary = {
        "checkpoint": str(ckpt_stem.with_suffix(".json")),
        "metrics": str(metrics.path),
        "epochs": net.epochs_trained,
        "results": [],
    }
    if config.get("head") and config["head"] != "none":
        results = fit_and_evaluate_head(
            net, config, head_ds, test_ds, out_dir=out_dir, metrics=metrics
        )
        summary["results"] = results
    metrics.close()
    return summary


def fit_and_evaluate_head(net, config: dict, head_ds, test_ds, out_dir=None,
                          metrics=None) -> list:
    """Fit the configured head on head_ds; report train (and test) accuracy."""
    kind = config["head"]
    seed = int(config["seed"])
    results = []

    if kind == "fewshot":
        table = fewshot_build(
            net, head_ds, shots=int(config.get("shots") or 20),
            rng=np.random.default_rng(seed + 3),
        )
        head = table
        train_rep = evaluate(table, net, head_ds)
        test_rep = evaluate(table, net, test_ds) if test_ds else None
        scopes = [(f"layer{li}", li) for li in train_rep["per_layer"]]
        for scope, li in scopes:
            results.append({
                "head": "fewshot", "layer_scope": scope,
                "train_acc": train_rep["per_layer"][li],
                "test_acc": test_rep["per_layer"][li] if test_rep else None,
                "n_train": train_rep["n"],
                "n_test": test_rep["n"] if test_rep else None,
            })
        results.append({
            "head": "fewshot", "layer_scope": "combined",
            "train_acc": train_rep["combined"],
            "test_acc": test_rep["combined"] if test_rep else None,
            "n_train": train_rep["n"],
            "n_test": test_rep["n"] if test_rep else None,
        })
    else:
        feats = np.stack([net.collect_features(s) for s in head_ds.samples])
        labels = head_ds.labels()
        if kind == "gd":
            head = train_gd_head(
                feats, labels, head_ds.n_classes,
                epochs=int(config.get("head_epochs") or 1),
                learning_rate=float(config.get("head_lr") or 1e-3),
                rng=np.random.default_rng(seed + 2),
            )
        elif kind == "lsq":
            head = lsq_fit(feats, labels, head_ds.n_classes,
                           ridge=float(config.get("ridge") or 0.0))
        else:
            raise EchoSpikeError(f"unknown head type {kind!r}")
        train_rep = evaluate(head, net, head_ds, features=feats)
        test_rep = evaluate(head, net, test_ds) if test_ds else None
        results.append({
            "head": kind, "layer_scope": train_rep["layer_scope"],
            "train_acc": train_rep["accuracy"],
            "test_acc": test_rep["accuracy"] if test_rep else None,
            "n_train": train_rep["n"],
            "n_test": test_rep["n"] if test_rep else None,
        })

    if out_dir is not None:
        save_head(Path(out_dir) / f"head_{kind}", head, extra={"run_config": config})
    if metrics is not None:
        for r in results:
            metrics.write({"type": "evaluation", **r})
    return results


# ---------------------------------------------------------------------------
# Report schema
# ---------------------------------------------------------------------------


def validate_report(report: dict) -> None:
    """Raise ValueError unless `report` matches the documented schema."""
    if not isinstance(report, dict):
        raise ValueError("report must be an object")
    if report.get("format") != REPORT_FORMAT:
        raise ValueError(f"report format must be {REPORT_FORMAT!r}")
    if not isinstance(report.get("version"), int):
        raise ValueError("report version must be an integer")
    for key in ("checkpoint", "dataset"):
        if not isinstance(report.get(key), str):
            raise ValueError(f"report {key} must be a string")
    if not isinstance(report.get("run_config"), dict):
        raise ValueError("report run_config must be an object")
    results = report.get("results")
    if not isinstance(results, list) or not results:
        raise ValueError("report results must be a non-empty list")
    for r in results:
        if not isinstance(r.get("head"), str) or not isinstance(r.get("layer_scope"), str):
            raise ValueError("result head and layer_scope must be strings")
        if not isinstance(r.get("test_acc"), float):
            raise ValueError("result test_acc must be a float")
        for opt in ("train_acc",):
            if r.get(opt) is not None and not isinstance(r[opt], float):
                raise ValueError(f"result {opt} must be a float or null")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, parser) -> int:
    try:
        ds = espk.synth_generate(
            args.classes, args.channels, args.steps,
            args.rate_hi, args.rate_lo, args.samples, args.seed,
        )
    except ValueError as e:
        parser.error(str(e))
    espk.save(ds, args.out)
    events = sum(s.n_events for s in ds.samples)
    print(
        f"wrote {args.out}: {len(ds)} samples, {ds.n_classes} classes, "
        f"{ds.channels} channels x {ds.steps} steps, {events} events"
    )
    return 0


def cmd_train(args, parser) -> int:
    if args.from_manifest:
        with open(args.from_manifest, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        config = manifest.get("run_config")
        if not config:
            parser.error(f"{args.from_manifest} embeds no run_config")
        if args.out is not None:
            config["out"] = args.out
    else:
        if not args.data:
            parser.error("--data is required (or --from-manifest)")
        try:
            config = _config_from_args(args)
        except ValueError as e:
            parser.error(str(e))
        config["out"] = args.out or _default_out()
    summary = run_training(config, resume=args.resume)
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"metrics:    {summary['metrics']}")
    for r in summary["results"]:
        test = "n/a" if r["test_acc"] is None else f"{r['test_acc']:.4f}"
        print(
            f"head={r['head']} scope={r['layer_scope']} "
            f"train_acc={r['train_acc']:.4f} test_acc={test}"
        )
    return 0


def cmd_eval(args, parser) -> int:
    net, manifest = EsppNetwork.load_checkpoint(args.checkpoint)
    run_config = dict(manifest.get("run_config") or {})
    trained_head = run_config.get("head")
    if trained_head == "none":
        trained_head = None
    run_config["head"] = args.head or trained_head or "lsq"
    for key, val in (
        ("head_epochs", args.head_epochs), ("head_lr", args.head_lr),
        ("ridge", args.ridge), ("shots", args.shots),
    ):
        if val is not None:
            run_config[key] = val
    if "seed" not in run_config:
        run_config["seed"] = manifest.get("seed", 0)

    test_ds = espk.load(args.data)
    if test_ds.channels != net.spec.input_size:
        raise EchoSpikeError(
            f"dataset has {test_ds.channels} channels, checkpoint network expects "
            f"{net.spec.input_size}"
        )

    results = []
    if args.head_checkpoint:
        head, _ = load_head(args.head_checkpoint)
        rep = evaluate(head, net, test_ds)
        if rep["head"] == "fewshot":
            for li, acc in rep["per_layer"].items():
                results.append({"head": "fewshot", "layer_scope": f"layer{li}",
                                "train_acc": None, "test_acc": acc,
                                "n_train": None, "n_test": rep["n"]})
            results.append({"head": "fewshot", "layer_scope": "combined",
                            "train_acc": None, "test_acc": rep["combined"],
                            "n_train": None, "n_test": rep["n"]})
        else:
            results.append({"head": rep["head"], "layer_scope": rep["layer_scope"],
                            "train_acc": None, "test_acc": rep["accuracy"],
                            "n_train": None, "n_test": rep["n"]})
    else:
        train_path = args.train_data or run_config.get("data")
        if not train_path:
            parser.error("need --train-data (or a checkpoint embedding its data path)")
        head_config = dict(run_config)
        head_config["data"] = train_path
        head_config["test_data"] = args.data
        train_ds, _ = _load_train_test({**head_config, "holdout": None})
        head_split = float(run_config.get("head_split") or 0.0)
        if run_config.get("holdout"):
            train_ds, _ = train_ds.split(int(run_config["holdout"]))
        if head_split > 0.0:
            _, head_ds = train_ds.split(max(1, int(round(head_split * len(train_ds)))))
        else:
            head_ds = train_ds
        results = fit_and_evaluate_head(net, head_config, head_ds, test_ds)

    for r in results:
        print(json.dumps({"type": "evaluation", **r}, sort_keys=True))

    if args.report:
        report = {
            "format": REPORT_FORMAT,
            "version": 1,
            "checkpoint": str(args.checkpoint),
            "dataset": str(args.data),
            "run_config": run_config,
            "results": results,
        }
        validate_report(report)
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"report: {args.report}")
    return 0


def cmd_info(args, parser) -> int:
    ds = espk.load(args.path)
    events = sum(s.n_events for s in ds.samples)
    counts = np.bincount(ds.labels(), minlength=ds.n_classes) if len(ds) else []
    print(f"{args.path}: {len(ds)} samples, {ds.n_classes} classes, "
          f"{ds.channels} channels x {ds.steps} steps, {events} events")
    if len(ds):
        print("per-class counts:", " ".join(str(int(c)) for c in counts))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echospike",
        description="Train and evaluate online-learning spiking networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ESPK dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--rate-hi", type=float, default=0.17)
    p.add_argument("--rate-lo", type=float, default=0.09)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="phase-1 training plus optional head fit")
    p.add_argument("--data", help="training ESPK file")
    p.add_argument("--test-data", help="held-out ESPK file for accuracy reports")
    p.add_argument("--holdout", type=int, help="split off the last N train samples as test")
    p.add_argument("--preset", default="synthetic",
                   help="bundled preset name or a key=value config file")
    p.add_argument("--layers", default="64,64", help="comma-separated hidden sizes")
    p.add_argument("--recurrent", action="store_true",
                   help="feed each layer its own previous-step activity")
    p.add_argument("--wiring", choices=("all", "last"), default="all")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairing", choices=("balanced", "natural"), default="balanced")
    p.add_argument("--p-fix", type=float, default=0.5)
    p.add_argument("--augment-shift", type=int, default=0)
    p.add_argument("--head", choices=("gd", "lsq", "fewshot", "none"), default="lsq")
    p.add_argument("--head-epochs", type=int, default=1)
    p.add_argument("--head-lr", type=float, default=1e-3)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--shots", type=int, default=20)
    p.add_argument("--head-split", type=float, default=0.0,
                   help="fraction of train data reserved for the head fit")
    p.add_argument("--out", help="output directory (default: $ECHOSPIKE_OUT_DIR or .)")
    p.add_argument("--resume", help="checkpoint manifest to continue from")
    p.add_argument("--from-manifest",
                   help="rerun the run_config embedded in a checkpoint manifest")
    for key in _OVERRIDE_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", type=float, default=None,
                       help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="evaluation ESPK file")
    p.add_argument("--train-data", help="ESPK file for refitting the head")
    p.add_argument("--head", choices=("gd", "lsq", "fewshot"))
    p.add_argument("--head-checkpoint", help="load a saved head instead of refitting")
    p.add_argument("--head-epochs", type=int)
    p.add_argument("--head-lr", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--shots", type=int)
    p.add_argument("--report", help="write the full JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="describe an ESPK file")
    p.add_argument("path")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except EchoSpikeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
