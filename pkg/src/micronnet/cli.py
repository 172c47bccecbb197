"""Operator command line: train, eval, quantize, metrics, search, synth-data.

A single JSON config file drives a run.  Every key has a default and
unknown keys are rejected, so the config is a complete, reproducible
record of the invocation; flags override the few values that vary between
runs (seed, paths).  Commands are deterministic: rerunning with the same
config and seed overwrites every output byte-identically.

Exit codes: 0 success, 1 user/config error, 2 data error, 3 infeasible
search.  The only environment variable consulted is MICRONNET_QUIET,
which mutes stdout chatter (reports are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import (
    AugmentPolicy,
    augment,
    balance_plan,
    degrade,
    generate_synthetic,
    load_gtsrb,
    stack_samples,
    write_benchmark_tree,
)
from .efficiency import efficiency_report, report_rows, report_text
from .errors import DataError
from .network import (
    ArchitectureSpec,
    build,
    load,
    micronnet_default,
    save,
    spec_from_dict,
    spec_to_dict,
)
from .quantization import quant_report_rows, quant_report_text, quantize
from .search import (
    Evaluator,
    brute_force,
    glyph_space,
    log_text,
    mock_evaluator,
    optimize,
    toy_space,
    training_evaluator,
)
from .training import TrainConfig, evaluate, trace_text, train


@dataclass(frozen=True)
class SearchSettings:
    """Search-specific slice of the run config."""

    space: str = "toy"
    evaluator: str = "mock"
    method: str = "greedy"
    floor: float = 0.9
    budget: int = 10_000
    samples_per_class: int = 8
    split_ratio: float = 0.8

    def __post_init__(self) -> None:
        if self.space not in ("toy", "glyph"):
            raise ValueError(f"search space must be 'toy' or 'glyph', got {self.space!r}")
        if self.evaluator not in ("mock", "training"):
            raise ValueError(f"evaluator must be 'mock' or 'training', got {self.evaluator!r}")
        if self.method not in ("greedy", "brute-force"):
            raise ValueError(f"method must be 'greedy' or 'brute-force', got {self.method!r}")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError(f"floor must be in [0, 1], got {self.floor}")
        if self.budget < 1 or self.samples_per_class < 1:
            raise ValueError("budget and samples_per_class must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond command-line paths.

    ``spec`` is "default" or a path to an architecture JSON file.  ``seed``
    drives dataset shuffling/splitting and synthetic generation; the
    training loop and augmentation draws keep their own seeds inside
    ``training`` and ``augment``.  ``balance_target`` > 0 augments every
    class up to that many samples; ``augment`` set without balancing adds
    one augmented copy per original.  ``limit`` > 0 caps the loaded sample
    count (smoke runs); ``checkpoint_every`` > 0 writes intermediate
    checkpoints next to the output model.
    """

    spec: str = "default"
    seed: int = 0
    training: TrainConfig = TrainConfig()
    augment: AugmentPolicy | None = None
    balance_target: int = 0
    val_fraction: float = 0.2
    limit: int = 0
    checkpoint_every: int = 0
    search: SearchSettings = SearchSettings()

    def __post_init__(self) -> None:
        if self.balance_target < 0 or self.limit < 0 or self.checkpoint_every < 0:
            raise ValueError("balance_target, limit and checkpoint_every must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


def _section(cls, payload, where: str):
    if not isinstance(payload, dict):
        raise ValueError(f"config section {where!r} must be a mapping")
    unknown = sorted(set(payload) - set(cls.__dataclass_fields__))
    if unknown:
        raise ValueError(f"unknown {where} key(s): {', '.join(unknown)}")
    return cls(**payload)


def load_run_config(path=None, seed=None) -> RunConfig:
    """Parse a JSON config file; omitted keys take their defaults.

    ``seed`` (the --seed flag) overrides the config's run seed.
    """
    payload = {}
    if path is not None:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(payload) - set(RunConfig.__dataclass_fields__))
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = dict(payload)
    if "training" in kwargs:
        kwargs["training"] = _section(TrainConfig, kwargs["training"], "training")
    if kwargs.get("augment") is not None:
        kwargs["augment"] = _section(AugmentPolicy, kwargs["augment"], "augment")
    if "search" in kwargs:
        kwargs["search"] = _section(SearchSettings, kwargs["search"], "search")
    cfg = RunConfig(**kwargs)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def resolve_spec(token: str) -> ArchitectureSpec:
    """"default" or a path to an architecture JSON file."""
    if token == "default":
        return micronnet_default()
    return spec_from_dict(json.loads(Path(token).read_text(encoding="utf-8")))


def _say(text: str) -> None:
    if not os.environ.get("MICRONNET_QUIET"):
        print(text)


def _write_text(path: Path, content: str) -> None:
    if not content.endswith("\n"):
        content += "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def _emit_report(base, text: str, rows: str) -> None:
    """Dual emission: BASE.txt human table, BASE.csv delimited rows."""
    base = Path(base)
    _write_text(Path(str(base) + ".txt"), text)
    _write_text(Path(str(base) + ".csv"), rows)


def _load_samples(data_root, split: str, limit: int = 0) -> list:
    root = Path(data_root)
    if not root.is_dir():
        raise DataError(f"data root {root} is not a directory")
    samples = list(load_gtsrb(root, split))
    if limit:
        samples = samples[:limit]
    return samples


def _training_arrays(samples, cfg: RunConfig):
    """Stack originals plus any balancing/augmentation copies."""
    x, y = stack_samples(samples)
    extra_x, extra_y = [], []
    if cfg.balance_target:
        plan = balance_plan(Counter(int(s.label) for s in samples), cfg.balance_target)
        policy = cfg.augment if cfg.augment is not None else AugmentPolicy()
        draw = 0
        for i, s in enumerate(samples):
            for _ in range(plan[int(s.label)]):
                extra_x.append(augment(x[i], policy, draw, label=int(s.label)))
                extra_y.append(int(s.label))
                draw += 1
    elif cfg.augment is not None:
        for i, s in enumerate(samples):
            extra_x.append(augment(x[i], cfg.augment, i, label=int(s.label)))
            extra_y.append(int(s.label))
    if extra_x:
        x = np.concatenate([x, np.stack(extra_x)])
        y = np.concatenate([y, np.asarray(extra_y, dtype=y.dtype)])
    return x, y


def _split_train_val(x, y, val_fraction: float, seed: int):
    if val_fraction == 0.0 or len(x) < 2:
        return x, y, None, None
    order = np.random.default_rng(seed).permutation(len(x))
    n_val = min(max(int(round(len(x) * val_fraction)), 1), len(x) - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    return x[train_idx], y[train_idx], x[val_idx], y[val_idx]


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    spec = resolve_spec(cfg.spec)
    samples = _load_samples(args.data, "train", cfg.limit)
    x, y = _training_arrays(samples, cfg)
    tx, ty, vx, vy = _split_train_val(x, y, cfg.val_fraction, cfg.seed)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    net = build(spec, seed=cfg.training.seed)
    net, trace = train(
        net, tx, ty, cfg.training,
        checkpoint_dir=out.parent if cfg.checkpoint_every else None,
        checkpoint_every=cfg.checkpoint_every,
    )
    save(net, out)
    _write_text(Path(str(out) + ".trace.csv"), trace_text(trace))

    train_acc = evaluate(net, tx, ty)
    _say(f"train_accuracy: {train_acc:.6f}")
    if vx is not None:
        _say(f"val_accuracy: {evaluate(net, vx, vy):.6f}")
    return 0


def _eval_rows_text(rows) -> tuple[str, str]:
    text_lines = ["sigma_pct  top1_accuracy"]
    csv_lines = ["sigma_pct,top1_accuracy"]
    for sigma, acc in rows:
        text_lines.append(f"{sigma:<9g}  {acc:.6f}")
        csv_lines.append(f"{sigma:g},{acc:.6f}")
    return "\n".join(text_lines), "\n".join(csv_lines)


def cmd_eval(args) -> int:
    net = load(args.model)
    samples = _load_samples(args.data, args.split, args.limit)
    x, y = stack_samples(samples)

    rows = [(0.0, evaluate(net, x, y))]
    for sigma in args.degrade:
        rows.append((sigma, evaluate(net, degrade(x, sigma, args.seed), y)))
    for sigma, acc in rows:
        _say(f"sigma={sigma:g}% top1={acc:.6f}")
    text, csv = _eval_rows_text(rows)
    _emit_report(args.out, text, csv)
    return 0


_FORMAT_ALIASES = {"fp16": "float16", "float16": "float16", "fixed16": "fixed16"}


def _probe_batch(args, spec: ArchitectureSpec) -> np.ndarray:
    if args.data is not None:
        samples = _load_samples(args.data, args.split, args.probes)
        x, _ = stack_samples(samples)
        return x
    rng = np.random.default_rng(args.seed)
    return rng.uniform(0.0, 1.0, (args.probes, *spec.input_shape)).astype(np.float32)


def cmd_quantize(args) -> int:
    if args.probes < 1:
        raise ValueError(f"--probes must be >= 1, got {args.probes}")
    net = load(args.model)
    probes = _probe_batch(args, net.spec)
    qnet, report = quantize(net, _FORMAT_ALIASES[args.format], probes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(qnet, out)
    text = quant_report_text(report)
    _emit_report(args.report, text, quant_report_rows(report))
    _say(text)
    return 0


def cmd_metrics(args) -> int:
    spec = load(args.model).spec if args.model is not None else resolve_spec(args.spec)
    report = efficiency_report(spec, args.accuracy)
    text = report_text(report)
    _emit_report(args.out, text, report_rows(report))
    _say(text)
    return 0


def cmd_search(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    s = cfg.search
    space = toy_space() if s.space == "toy" else glyph_space()

    if s.evaluator == "mock":
        ev = Evaluator(mock_evaluator)
    else:
        num_classes = space.base.layers[-1].num_classes
        samples = generate_synthetic(s.samples_per_class, seed=cfg.seed, classes=num_classes)
        x, y = stack_samples(samples)
        ev = training_evaluator(x, y, cfg.training, split_ratio=s.split_ratio)

    if s.method == "greedy":
        result = optimize(space, ev, s.floor, s.budget)
    else:
        result = brute_force(space, ev, s.floor)

    summary = "\n".join([
        f"status: {'ok' if result.feasible else 'infeasible'}",
        f"space: {s.space} ({space.size} points)",
        f"evaluator: {s.evaluator}",
        f"method: {s.method}",
        f"floor: {s.floor:g}",
        f"evaluations: {ev.calls}",
        f"params: {result.params}",
        f"macs: {result.macs}",
        f"accuracy: {result.accuracy:.6f}",
    ])
    base = str(args.out)
    _write_text(Path(base + ".txt"), summary)
    _write_text(Path(base + ".log.csv"), log_text(result))
    _write_text(
        Path(base + ".spec.json"),
        json.dumps(spec_to_dict(result.spec), indent=2, sort_keys=True),
    )
    _say(summary)
    return 0 if result.feasible else 3


def cmd_synth_data(args) -> int:
    if args.train_per_class < 1 or args.test_per_class < 0:
        raise ValueError("--train-per-class must be >= 1 and --test-per-class >= 0")
    root = Path(args.out)
    n = write_benchmark_tree(
        generate_synthetic(args.train_per_class, seed=args.seed, classes=args.classes),
        root, "train",
    )
    _say(f"train: {n} samples")
    if args.test_per_class:
        m = write_benchmark_tree(
            generate_synthetic(args.test_per_class, seed=args.seed + 1, classes=args.classes),
            root, "test",
        )
        _say(f"test: {m} samples")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="micronnet",
        description="Compact traffic-sign classifier: training, evaluation, "
                    "quantization, efficiency metrics and architecture search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network on a benchmark-layout dataset")
    t.add_argument("--config", default=None, help="JSON run config; omitted keys take defaults")
    t.add_argument("--data", required=True, help="dataset root containing a train/ split")
    t.add_argument("--out", default="model.mnet", help="output model path")
    t.add_argument("--seed", type=int, default=None, help="override the config run seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy, optionally under sensor degradation")
    e.add_argument("--model", required=True, help="trained model file")
    e.add_argument("--data", required=True, help="dataset root")
    e.add_argument("--split", default="test", help="dataset split to score (default: test)")
    e.add_argument("--degrade", type=float, action="append", default=[], metavar="SIGMA",
                   help="add a row with Gaussian noise at SIGMA%% of the dynamic range "
                        "(repeatable)")
    e.add_argument("--limit", type=int, default=0, help="cap loaded samples (0 = all)")
    e.add_argument("--seed", type=int, default=0, help="noise seed for --degrade")
    e.add_argument("--out", default="eval_report", help="report base path (.txt/.csv)")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("quantize", help="narrow a trained model to 16-bit storage")
    q.add_argument("--model", required=True, help="float32 model file")
    q.add_argument("--format", required=True, choices=sorted(_FORMAT_ALIASES),
                   help="target parameter format")
    q.add_argument("--out", required=True, help="output model path")
    q.add_argument("--data", default=None,
                   help="dataset root for parity probes (default: seeded random probes)")
    q.add_argument("--split", default="test", help="split probes come from (default: test)")
    q.add_argument("--probes", type=int, default=256, help="number of parity probes")
    q.add_argument("--seed", type=int, default=0, help="seed for random probes")
    q.add_argument("--report", default="quant_report", help="report base path (.txt/.csv)")
    q.set_defaults(func=cmd_quantize)

    m = sub.add_parser("metrics", help="parameter/MAC counts and efficiency scores")
    src = m.add_mutually_exclusive_group()
    src.add_argument("--model", default=None, help="score a trained model file")
    src.add_argument("--spec", default="default",
                     help='"default" or an architecture JSON file (default: default)')
    m.add_argument("--accuracy", type=float, default=None,
                   help="top-1 accuracy in percent; omitting it drops the "
                        "accuracy-dependent rows")
    m.add_argument("--out", default="metrics_report", help="report base path (.txt/.csv)")
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("search", help="constrained microarchitecture search")
    s.add_argument("--config", default=None, help="JSON run config with a search section")
    s.add_argument("--seed", type=int, default=None, help="override the config run seed")
    s.add_argument("--out", default="search_result",
                   help="output base path (.txt/.log.csv/.spec.json)")
    s.set_defaults(func=cmd_search)

    g = sub.add_parser("synth-data", help="generate a synthetic benchmark-layout dataset")
    g.add_argument("--out", required=True, help="dataset root to create")
    g.add_argument("--train-per-class", type=int, default=16, help="train samples per class")
    g.add_argument("--test-per-class", type=int, default=4, help="test samples per class")
    g.add_argument("--classes", type=int, default=43, help="number of classes")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.set_defaults(func=cmd_synth_data)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exit_:
        return 0 if not exit_.code else 1
    try:
        return args.func(args)
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
