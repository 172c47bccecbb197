"""SGD-with-momentum training loop: staircase exponential learning-rate
decay, uniform L2 weight decay, epoch-wise shuffling, loss/accuracy trace.

The update per iteration is

    v <- momentum * v - lr * (grad + weight_decay * param)
    param <- param + v

with lr = base_lr * decay_rate ** floor(iteration / decay_step). Weight
decay applies to weights and biases alike. All arithmetic is float32; the
loop owns and mutates its network's parameter arrays in place.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .network import Network, backward, predict, save


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.007
    momentum: float = 0.9
    decay_step: int = 1000
    decay_rate: float = 0.9996
    weight_decay: float = 1e-5
    batch_size: int = 50
    max_iterations: int = 60_000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.base_lr <= 1 or not 0 < self.decay_rate <= 1:
            raise ValueError("base_lr and decay_rate must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.weight_decay <= 1:
            raise ValueError("weight_decay must lie in [0, 1]")
        if self.decay_step < 1 or self.batch_size < 1 or self.max_iterations < 0:
            raise ValueError("decay_step and batch_size must be >= 1, max_iterations >= 0")


def lr_schedule(cfg: TrainConfig, iteration: int) -> float:
    """base_lr * decay_rate ** floor(iteration / decay_step)."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return cfg.base_lr * cfg.decay_rate ** (iteration // cfg.decay_step)


def zero_velocity(net: Network) -> list[list[np.ndarray]]:
    return [[np.zeros_like(w), np.zeros_like(b)] for w, b in net.parameters]


def sgd_step(net: Network, grads, velocity, cfg: TrainConfig, iteration: int):
    """One momentum update in place; returns (net, velocity)."""
    if len(velocity) != len(net.parameters):
        raise DimensionError("velocity structure does not match parameters")
    lr = np.float32(lr_schedule(cfg, iteration))
    mom = np.float32(cfg.momentum)
    wd = np.float32(cfg.weight_decay)
    for (w, b), (gw, gb), vel in zip(net.parameters, grads, velocity):
        for p, g, k in ((w, gw, 0), (b, gb, 1)):
            v = vel[k]
            if v.shape != p.shape or g.shape != p.shape:
                raise DimensionError(f"velocity/grad shape {v.shape}/{g.shape} != param {p.shape}")
            v *= mom
            v -= lr * (g + wd * p)
            p += v
    return net, velocity


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    lr: float
    loss: float
    val_accuracy: float | None = None


def trace_text(trace) -> str:
    """Delimited rendering of a training trace, one row per iteration."""
    lines = ["iteration,lr,loss,val_accuracy"]
    for row in trace:
        val = "" if row.val_accuracy is None else f"{row.val_accuracy:.6f}"
        lines.append(f"{row.iteration},{row.lr:.10g},{row.loss:.8f},{val}")
    return "\n".join(lines)


def evaluate(net: Network, images, labels, batch_size: int = 256) -> float:
    """Top-1 accuracy of net over the given samples."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    hits = 0
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        hits += int((predict(net, chunk) == labels[start : start + batch_size]).sum())
    return hits / len(images)


def train(net: Network, images, labels, cfg: TrainConfig, *,
          hooks=(), val_images=None, val_labels=None, val_every: int = 0,
          checkpoint_dir=None, checkpoint_every: int = 0):
    """Run cfg.max_iterations momentum-SGD batches over (images, labels).

    Batches walk an epoch-wise permutation reseeded from cfg.seed, so a
    rerun with the same config reproduces the loss trace bit for bit.
    Each hook is called as hook(iteration, lr, loss, val_accuracy) with
    val_accuracy None except every `val_every` iterations. Returns
    (net, trace).
    """
    images = np.ascontiguousarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("training dataset is empty")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(images))
    cursor = 0
    velocity = zero_velocity(net)
    trace: list[TraceRow] = []

    for iteration in range(cfg.max_iterations):
        if cursor >= len(order):
            order = rng.permutation(len(images))
            cursor = 0
        take = min(cfg.batch_size, len(order) - cursor)
        idx = order[cursor : cursor + take]
        cursor += take

        grads, loss = backward(net, images[idx], labels[idx])
        sgd_step(net, grads, velocity, cfg, iteration)

        lr = lr_schedule(cfg, iteration)
        val_acc = None
        if val_every and val_images is not None and (iteration + 1) % val_every == 0:
            val_acc = evaluate(net, val_images, val_labels)
        trace.append(TraceRow(iteration, lr, loss, val_acc))
        for hook in hooks:
            hook(iteration, lr, loss, val_acc)
        if checkpoint_dir is not None and checkpoint_every and (iteration + 1) % checkpoint_every == 0:
            save(net, os.path.join(os.fspath(checkpoint_dir), f"checkpoint_{iteration + 1:07d}.mnet"))
    return net, trace
