"""Parameter and multiply-accumulate accounting plus the two scalar
efficiency metrics built on them: information density (accuracy per million
parameters) and NetScore.

NetScore unit convention: accuracy enters as a percentage, parameters in
millions, MACs in billions; the score is 20*log10(a^alpha / (p^beta *
m^gamma)). Bias additions are excluded from MAC counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import CLASSIFIER, CONV, FC, POOL, ArchitectureSpec, infer_shapes


def param_count(spec: ArchitectureSpec) -> int:
    """Total learnable scalars: conv kh*kw*cin*cout + cout, fc m*k + k."""
    shapes = infer_shapes(spec)
    total = 0
    for prev, layer in zip(shapes, spec.layers):
        if layer.kind == CONV:
            p = layer.conv
            total += p.kernel[0] * p.kernel[1] * prev[0] * p.out_channels + p.out_channels
        elif layer.kind == FC:
            m = int(np.prod(prev))
            total += m * layer.out_features + layer.out_features
        elif layer.kind == CLASSIFIER:
            m = int(np.prod(prev))
            total += m * layer.num_classes + layer.num_classes
    return total


def mac_count(spec: ArchitectureSpec) -> int:
    """Multiply-accumulates for one forward pass of a single sample.

    Conv: out_h*out_w*kh*kw*cin*cout. Fully connected: m*k. Pooling and
    activations contribute nothing; bias additions are not counted.
    """
    shapes = infer_shapes(spec)
    total = 0
    for prev, nxt, layer in zip(shapes, shapes[1:], spec.layers):
        if layer.kind == CONV:
            p = layer.conv
            total += nxt[1] * nxt[2] * p.kernel[0] * p.kernel[1] * prev[0] * p.out_channels
        elif layer.kind == FC:
            total += int(np.prod(prev)) * layer.out_features
        elif layer.kind == CLASSIFIER:
            total += int(np.prod(prev)) * layer.num_classes
    return total


def instrumented_mac_count(spec: ArchitectureSpec) -> int:
    """Run a literal single-sample forward pass and count executed multiplies.

    Independent of mac_count: direct window loops over real arrays, one
    counter bump per elementwise multiply performed. Slow by design; meant
    as a cross-check oracle, not for production accounting.
    """
    shapes = infer_shapes(spec)
    c, h, w = spec.input_shape
    x = np.zeros((c, h, w), dtype=np.float32)
    macs = 0
    for prev, layer in zip(shapes, spec.layers):
        if layer.kind == CONV:
            p = layer.conv
            kh, kw = p.kernel
            xp = np.pad(x, ((0, 0), (p.pad, p.pad), (p.pad, p.pad))) if p.pad else x
            oh = (xp.shape[1] - kh) // p.stride + 1
            ow = (xp.shape[2] - kw) // p.stride + 1
            weights = np.zeros((p.out_channels, xp.shape[0], kh, kw), dtype=np.float32)
            out = np.zeros((p.out_channels, oh, ow), dtype=np.float32)
            for oc in range(p.out_channels):
                for oy in range(oh):
                    for ox in range(ow):
                        patch = xp[:, oy * p.stride : oy * p.stride + kh, ox * p.stride : ox * p.stride + kw]
                        prod = patch * weights[oc]
                        macs += prod.size
                        out[oc, oy, ox] = prod.sum()
            x = out
        elif layer.kind == POOL:
            kh, kw = layer.pool.kernel
            s = layer.pool.stride
            oh = -(-(x.shape[1] - kh) // s) + 1
            ow = -(-(x.shape[2] - kw) // s) + 1
            out = np.zeros((x.shape[0], oh, ow), dtype=np.float32)
            for oy in range(oh):
                for ox in range(ow):
                    out[:, oy, ox] = x[:, oy * s : oy * s + kh, ox * s : ox * s + kw].max(axis=(1, 2))
            x = out
        else:
            width = layer.out_features if layer.kind == FC else layer.num_classes
            flat = x.reshape(-1)
            weights = np.zeros((flat.size, width), dtype=np.float32)
            out = np.zeros(width, dtype=np.float32)
            for k in range(width):
                prod = flat * weights[:, k]
                macs += prod.size
                out[k] = prod.sum()
            x = out
    return macs


def information_density(accuracy_pct: float, params: int) -> float:
    """Accuracy percent per million parameters."""
    if params <= 0:
        raise ValueError("params must be positive")
    return float(accuracy_pct) / (params / 1e6)


def netscore(accuracy_pct: float, params: int, macs: int,
             alpha: float = 2.0, beta: float = 0.5, gamma: float = 0.5) -> float:
    """20*log10(a^alpha / (p^beta * m^gamma)); p in MParams, m in GMACs."""
    if not 0 < accuracy_pct <= 100:
        raise ValueError(f"accuracy_pct must be in (0, 100], got {accuracy_pct}")
    if params <= 0 or macs <= 0:
        raise ValueError("params and macs must be positive")
    a = float(accuracy_pct)
    p = params / 1e6
    m = macs / 1e9
    return 20.0 * (alpha * math.log10(a) - beta * math.log10(p) - gamma * math.log10(m))


@dataclass(frozen=True)
class EfficiencyReport:
    params: int
    macs: int
    accuracy_pct: float | None
    info_density: float | None
    netscore: float | None
    alpha: float = 2.0
    beta: float = 0.5
    gamma: float = 0.5


def efficiency_report(spec: ArchitectureSpec, accuracy_pct: float | None = None,
                      alpha: float = 2.0, beta: float = 0.5, gamma: float = 0.5) -> EfficiencyReport:
    """Size/compute metrics for a spec; accuracy-derived scores when known."""
    p = param_count(spec)
    m = mac_count(spec)
    if accuracy_pct is None:
        return EfficiencyReport(params=p, macs=m, accuracy_pct=None,
                                info_density=None, netscore=None,
                                alpha=alpha, beta=beta, gamma=gamma)
    return EfficiencyReport(
        params=p,
        macs=m,
        accuracy_pct=float(accuracy_pct),
        info_density=information_density(accuracy_pct, p),
        netscore=netscore(accuracy_pct, p, m, alpha, beta, gamma),
        alpha=alpha, beta=beta, gamma=gamma,
    )


# (name, formatter, needs_accuracy)
_REPORT_FIELDS = (
    ("parameters", lambda r: str(r.params), False),
    ("macs", lambda r: str(r.macs), False),
    ("accuracy_pct", lambda r: f"{r.accuracy_pct:.4f}", True),
    ("info_density_pct_per_mparam", lambda r: f"{r.info_density:.4f}", True),
    ("netscore", lambda r: f"{r.netscore:.4f}", True),
    ("alpha", lambda r: f"{r.alpha:g}", True),
    ("beta", lambda r: f"{r.beta:g}", True),
    ("gamma", lambda r: f"{r.gamma:g}", True),
)


def _active_fields(report: EfficiencyReport):
    if report.accuracy_pct is None:
        return [(n, f) for n, f, needs in _REPORT_FIELDS if not needs]
    return [(n, f) for n, f, _ in _REPORT_FIELDS]


def report_text(report: EfficiencyReport) -> str:
    """Aligned two-column rendering of the report."""
    rows = [(name, fn(report)) for name, fn in _active_fields(report)]
    wname = max(len(n) for n, _ in rows)
    wval = max(len(v) for _, v in rows)
    lines = [f"{'metric'.ljust(wname)}  {'value'.rjust(wval)}"]
    lines += [f"{n.ljust(wname)}  {v.rjust(wval)}" for n, v in rows]
    return "\n".join(lines)


def report_rows(report: EfficiencyReport) -> str:
    """Comma-delimited header + one data row, for machine consumption."""
    fields = _active_fields(report)
    names = ",".join(name for name, _ in fields)
    vals = ",".join(fn(report) for _, fn in fields)
    return f"{names}\n{vals}"
