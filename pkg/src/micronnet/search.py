"""Constrained microarchitecture search over filter counts and kernel sizes.

The problem: minimize total parameter count over a finite grid of
per-convolution filter counts and kernel sizes, subject to a validation
accuracy floor.  ``optimize`` runs greedy coordinate descent with a
deterministic tie-break; ``brute_force`` enumerates small spaces exactly so
the greedy result can be compared against the true optimum.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .efficiency import mac_count, param_count
from .errors import SpecError
from .network import (
    CONV,
    ArchitectureSpec,
    LayerSpec,
    build,
    classifier_layer,
    conv_layer,
    fc_layer,
    pool_layer,
    spec_to_dict,
    validate_network_spec,
)
from .training import TrainConfig, evaluate, train

ALLOWED_KERNELS = (1, 3, 5, 7)


@dataclass(frozen=True)
class LayerChoices:
    """Candidate filter counts and kernel sizes for one convolution layer."""

    filters: Tuple[int, ...]
    kernels: Tuple[int, ...]

    def __post_init__(self) -> None:
        filters = tuple(int(f) for f in self.filters)
        kernels = tuple(int(k) for k in self.kernels)
        if not filters or any(f < 1 for f in filters):
            raise SpecError(f"filter candidates must be positive, got {filters}")
        if list(filters) != sorted(set(filters)):
            raise SpecError(f"filter candidates must be strictly increasing, got {filters}")
        if not kernels or any(k not in ALLOWED_KERNELS for k in kernels):
            raise SpecError(f"kernel candidates must be drawn from {ALLOWED_KERNELS}, got {kernels}")
        if list(kernels) != sorted(set(kernels)):
            raise SpecError(f"kernel candidates must be strictly increasing, got {kernels}")
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "kernels", kernels)


def layer_choices(min_filters: int, max_filters: int, step: int, kernels: Sequence[int]) -> LayerChoices:
    """Build a LayerChoices from a (min, max, step) filter range."""
    if step < 1 or max_filters < min_filters:
        raise SpecError(f"bad filter range ({min_filters}, {max_filters}, {step})")
    return LayerChoices(tuple(range(min_filters, max_filters + 1, step)), tuple(kernels))


# A point in the space: one (filter count, kernel size) pair per tunable
# convolution layer, in network order.
Point = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class SearchSpace:
    """A finite grid around a base architecture.

    ``choices[i]`` tunes the i-th convolution layer of ``base``; the base
    values must be among the candidates.  Every kernel combination is
    type-checked up front (filter counts cannot break the spatial chain),
    so every point in the space is a valid network.
    """

    base: ArchitectureSpec
    choices: Tuple[LayerChoices, ...]

    def __post_init__(self) -> None:
        validate_network_spec(self.base)
        choices = tuple(self.choices)
        conv_idx = tuple(i for i, l in enumerate(self.base.layers) if l.kind == CONV)
        if len(choices) != len(conv_idx):
            raise SpecError(
                f"{len(choices)} layer choice(s) for {len(conv_idx)} convolution layer(s)"
            )
        for slot, (idx, ch) in enumerate(zip(conv_idx, choices)):
            conv = self.base.layers[idx].conv
            kh, kw = conv.kernel
            if kh != kw:
                raise SpecError("search requires square kernels in the base spec")
            if conv.out_channels not in ch.filters:
                raise SpecError(
                    f"base filter count {conv.out_channels} of layer {slot}"
                    f" is not a candidate {ch.filters}"
                )
            if kh not in ch.kernels:
                raise SpecError(
                    f"base kernel {kh} of layer {slot} is not a candidate {ch.kernels}"
                )
        object.__setattr__(self, "choices", choices)
        object.__setattr__(self, "_conv_idx", conv_idx)
        # All filter counts type-check trivially; kernel sizes are what can
        # break the spatial chain, so validate every kernel combination.
        for combo in itertools.product(*(ch.kernels for ch in choices)):
            point = tuple(
                (self.base.layers[idx].conv.out_channels, k)
                for idx, k in zip(conv_idx, combo)
            )
            try:
                validate_network_spec(self.substitute(point))
            except SpecError as exc:
                raise SpecError(f"kernel combination {combo} does not type-check: {exc}")

    @property
    def size(self) -> int:
        n = 1
        for ch in self.choices:
            n *= len(ch.filters) * len(ch.kernels)
        return n

    def base_point(self) -> Point:
        return tuple(
            (self.base.layers[i].conv.out_channels, self.base.layers[i].conv.kernel[0])
            for i in self._conv_idx
        )

    def contains(self, point: Point) -> bool:
        if len(point) != len(self.choices):
            return False
        return all(
            f in ch.filters and k in ch.kernels
            for (f, k), ch in zip(point, self.choices)
        )

    def substitute(self, point: Point) -> ArchitectureSpec:
        """The architecture at a grid point."""
        layers = list(self.base.layers)
        for (f, k), idx in zip(point, self._conv_idx):
            conv = layers[idx].conv
            layers[idx] = conv_layer(f, k, stride=conv.stride, pad=conv.pad)
        return ArchitectureSpec(self.base.input_shape, tuple(layers))

    def iter_points(self):
        """All points, lexicographic by layer then (filters, kernel)."""
        axes = [
            [(f, k) for f in ch.filters for k in ch.kernels] for ch in self.choices
        ]
        return itertools.product(*axes)

    def shrink_moves(self, point: Point):
        """Single-coordinate shrinks of ``point``, in tie-break order.

        Per layer (earlier first): filter count down one candidate, then
        kernel size down one candidate.
        """
        moves = []
        for i, ((f, k), ch) in enumerate(zip(point, self.choices)):
            fi = ch.filters.index(f)
            if fi > 0:
                moves.append(point[:i] + ((ch.filters[fi - 1], k),) + point[i + 1 :])
            ki = ch.kernels.index(k)
            if ki > 0:
                moves.append(point[:i] + ((f, ch.kernels[ki - 1]),) + point[i + 1 :])
        return moves


def spec_id(spec: ArchitectureSpec) -> str:
    """Short stable identifier: hash of the canonical spec encoding."""
    blob = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode()).hexdigest()[:10]


@dataclass
class Evaluator:
    """Wraps a spec -> accuracy callable and counts underlying calls."""

    fn: Callable[[ArchitectureSpec], float]
    calls: int = 0

    def __call__(self, spec: ArchitectureSpec) -> float:
        self.calls += 1
        value = float(self.fn(spec))
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"evaluator returned {value}, expected [0, 1]")
        return value


@dataclass(frozen=True)
class ProbeRecord:
    """One evaluated point of the search."""

    spec: ArchitectureSpec
    spec_id: str
    params: int
    macs: int
    accuracy: float
    accepted: bool


@dataclass(frozen=True)
class SearchResult:
    spec: ArchitectureSpec
    params: int
    macs: int
    accuracy: float
    feasible: bool
    log: Tuple[ProbeRecord, ...]


class _Cache:
    """Memoized evaluation with a hard budget on underlying calls."""

    def __init__(self, space: SearchSpace, evaluator, budget: Optional[int]):
        self.space = space
        self.evaluator = evaluator
        self.budget = budget
        self.calls = 0
        self.seen: dict = {}
        self.order: list = []  # points in first-evaluation order

    def measure(self, point: Point) -> Optional[float]:
        """Accuracy at ``point``; None once the budget is exhausted."""
        if point in self.seen:
            return self.seen[point]
        if self.budget is not None and self.calls >= self.budget:
            return None
        self.calls += 1
        acc = float(self.evaluator(self.space.substitute(point)))
        self.seen[point] = acc
        self.order.append(point)
        return acc

    def build_log(self, accepted_points) -> Tuple[ProbeRecord, ...]:
        rows = []
        for point in self.order:
            spec = self.space.substitute(point)
            rows.append(
                ProbeRecord(
                    spec=spec,
                    spec_id=spec_id(spec),
                    params=param_count(spec),
                    macs=mac_count(spec),
                    accuracy=self.seen[point],
                    accepted=point in accepted_points,
                )
            )
        return tuple(rows)


def optimize(space: SearchSpace, evaluator, floor: float, budget: int) -> SearchResult:
    """Greedy coordinate descent toward fewer parameters under an accuracy floor.

    Starting from the base point, each round evaluates every
    single-coordinate shrink that would reduce the parameter count and
    moves to the one with the largest reduction whose accuracy stays at or
    above ``floor`` (ties: earlier layer first, filter move before kernel
    move).  Stops when no shrinking move is feasible or the evaluation
    budget runs out.  An infeasible base yields a result flagged
    ``feasible=False`` rather than an exception.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"floor must be in [0, 1], got {floor}")
    cache = _Cache(space, evaluator, budget)
    current = space.base_point()
    acc = cache.measure(current)
    params = param_count(space.substitute(current))
    if acc < floor:
        return SearchResult(
            spec=space.base,
            params=params,
            macs=mac_count(space.base),
            accuracy=acc,
            feasible=False,
            log=cache.build_log(set()),
        )
    accepted = {current}
    while True:
        best = None  # (reduction, point, accuracy)
        out_of_budget = False
        for move in space.shrink_moves(current):
            move_params = param_count(space.substitute(move))
            if move_params >= params:
                continue  # not a shrink in parameters; never adopted
            move_acc = cache.measure(move)
            if move_acc is None:
                out_of_budget = True
                break
            if move_acc < floor:
                continue
            reduction = params - move_params
            if best is None or reduction > best[0]:
                best = (reduction, move, move_acc)
        if out_of_budget or best is None:
            break
        current = best[1]
        params -= best[0]
        acc = best[2]
        accepted.add(current)
    final = space.substitute(current)
    return SearchResult(
        spec=final,
        params=params,
        macs=mac_count(final),
        accuracy=acc,
        feasible=True,
        log=cache.build_log(accepted),
    )


def brute_force(space: SearchSpace, evaluator, floor: float, cap: int = 10_000) -> SearchResult:
    """Exact optimum by exhaustive enumeration (small spaces only)."""
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"floor must be in [0, 1], got {floor}")
    if space.size > cap:
        raise ValueError(f"space has {space.size} points, cap is {cap}")
    cache = _Cache(space, evaluator, budget=None)
    best = None  # (params, point, accuracy)
    for point in space.iter_points():
        acc = cache.measure(point)
        if acc < floor:
            continue
        params = param_count(space.substitute(point))
        if best is None or params < best[0]:
            best = (params, point, acc)
    if best is None:
        base = space.base_point()
        return SearchResult(
            spec=space.base,
            params=param_count(space.base),
            macs=mac_count(space.base),
            accuracy=cache.seen[base],
            feasible=False,
            log=cache.build_log(set()),
        )
    spec = space.substitute(best[1])
    return SearchResult(
        spec=spec,
        params=best[0],
        macs=mac_count(spec),
        accuracy=best[2],
        feasible=True,
        log=cache.build_log({best[1]}),
    )


def conv_filters(spec: ArchitectureSpec) -> Tuple[int, ...]:
    """Filter counts of the convolution layers, in network order."""
    return tuple(l.conv.out_channels for l in spec.layers if l.kind == CONV)


def toy_space() -> SearchSpace:
    """Bundled 48-point space for exercising the optimizer end to end."""
    base = ArchitectureSpec(
        (3, 20, 20),
        (
            conv_layer(8, 5),
            pool_layer(2, 2),
            conv_layer(12, 3),
            conv_layer(16, 3),
            fc_layer(20),
            classifier_layer(5),
        ),
    )
    return SearchSpace(
        base,
        (
            layer_choices(2, 8, 2, (5,)),
            layer_choices(4, 12, 4, (3,)),
            layer_choices(4, 16, 4, (3,)),
        ),
    )


def glyph_space() -> SearchSpace:
    """Bundled 8-point space over a 48x48 glyph-classifier baseline.

    Small enough that a training-backed evaluator stays affordable: two
    filter choices per convolution, kernels fixed.
    """
    base = ArchitectureSpec(
        (3, 48, 48),
        (
            conv_layer(8, 5),
            pool_layer(3, 2),
            conv_layer(12, 3),
            pool_layer(3, 2),
            conv_layer(16, 3),
            pool_layer(3, 2),
            fc_layer(64),
            classifier_layer(43),
        ),
    )
    return SearchSpace(
        base,
        (
            layer_choices(4, 8, 4, (5,)),
            layer_choices(6, 12, 6, (3,)),
            layer_choices(8, 16, 8, (3,)),
        ),
    )


def mock_evaluator(spec: ArchitectureSpec) -> float:
    """Deterministic stand-in for a trained-accuracy measurement.

    Scores 0.97 when every convolution keeps a workable filter budget
    (at least 4/8/8 for three layers) and 0.5 below that, so any floor in
    (0.5, 0.97] carves a box-shaped feasible region out of ``toy_space``
    with a unique parameter-count minimum, while a floor of 1.0 is
    infeasible by construction.
    """
    f = conv_filters(spec)
    floors = (4, 8, 8)
    return 0.97 if len(f) >= len(floors) and all(a >= b for a, b in zip(f, floors)) else 0.5


def training_evaluator(
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    split_ratio: float = 0.8,
) -> Evaluator:
    """An Evaluator that trains each probed spec and scores held-out accuracy.

    The dataset is shuffled once with ``cfg.seed`` and split into a
    training part (``split_ratio``) and a validation part.  Each call
    builds the spec with ``cfg.seed``, trains it under ``cfg`` (callers
    pass a scaled-down iteration budget), and returns validation accuracy,
    so equal specs always score equally.
    """
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if len(images) != len(labels) or len(images) < 2:
        raise ValueError("need at least two samples with matching labels")
    order = np.random.default_rng(cfg.seed).permutation(len(images))
    cut = int(round(len(images) * split_ratio))
    cut = min(max(cut, 1), len(images) - 1)
    train_x, val_x = images[order[:cut]], images[order[cut:]]
    train_y, val_y = labels[order[:cut]], labels[order[cut:]]

    def run(spec: ArchitectureSpec) -> float:
        net = build(spec, seed=cfg.seed)
        net, _ = train(net, train_x, train_y, cfg)
        return evaluate(net, val_x, val_y)

    return Evaluator(run)


def log_text(result: SearchResult) -> str:
    """The evaluation log as delimited rows."""
    lines = ["spec_id,params,macs,accuracy,accepted"]
    for row in result.log:
        lines.append(
            f"{row.spec_id},{row.params},{row.macs},{row.accuracy:.6f},"
            f"{int(row.accepted)}"
        )
    return "\n".join(lines) + "\n"
