"""Post-training precision reduction: float16 and fixed16 variants of a
trained network, plus parity measurement against the float32 original.

Quantization narrows parameter storage only; inference still runs float32
arithmetic on the widened values, so any parity gap is attributable to
parameter rounding alone. The fixed16 path picks fractional bits per
tensor: as many as possible without overflowing int16 on that tensor's
largest magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import FLOAT16, FLOAT32, fixed16, narrow
from .network import Network, forward


def select_frac_bits(values: np.ndarray) -> int:
    """Largest frac_bits in [1, 14] whose grid holds every value un-saturated.

    max|v| < 2^(15 - frac_bits) by construction; the bound backs off a step
    in the razor-edge case where round-to-nearest would still land on
    2^15 = 32768, one past the int16 maximum. All-zero tensors take 14.
    """
    amax = float(np.max(np.abs(values))) if values.size else 0.0
    if not math.isfinite(amax):
        raise ValueError("cannot choose fixed-point format for non-finite values")
    if amax == 0.0:
        return 14
    _, exp = math.frexp(amax)  # amax = m * 2^exp with m in [0.5, 1)
    frac = min(14, 15 - exp)
    while frac >= 1 and np.rint(amax * 2.0**frac) > 32767:
        frac -= 1
    if frac < 1:
        raise ValueError(f"max magnitude {amax} exceeds the fixed16 dynamic range")
    return frac


@dataclass(frozen=True)
class TensorQuantStats:
    name: str
    max_abs_err: float
    mean_abs_err: float
    frac_bits: int | None


@dataclass(frozen=True)
class QuantizationReport:
    format_tag: str
    tensors: tuple[TensorQuantStats, ...]
    payload_bytes_before: int
    payload_bytes_after: int
    agreement: float
    max_softmax_deviation: float


def _require_float32(net: Network) -> None:
    if net.format != FLOAT32:
        raise ValueError(f"expected a float32 network, got {net.format.tag}")


def _payload_bytes(net: Network, bytes_per_scalar: int) -> int:
    return bytes_per_scalar * sum(w.size + b.size for w, b in net.parameters)


def to_float16(net: Network) -> Network:
    """Half-precision variant: every parameter rounded to nearest even."""
    _require_float32(net)
    params = tuple((narrow(w, FLOAT16), narrow(b, FLOAT16)) for w, b in net.parameters)
    return Network(spec=net.spec, parameters=params, format=FLOAT16)


def to_fixed16(net: Network, probe_batch) -> tuple[Network, QuantizationReport]:
    """Per-tensor Q-format variant plus a report measured on probe_batch."""
    _require_float32(net)
    params = []
    stats = []
    worst_frac = 14
    for i, (w, b) in enumerate(net.parameters):
        pair = []
        for arr, part in ((w, "weight"), (b, "bias")):
            frac = select_frac_bits(arr)
            q = narrow(arr, fixed16(frac))
            err = np.abs(q - arr)
            stats.append(TensorQuantStats(
                name=f"layer{i}.{part}",
                max_abs_err=float(err.max()) if err.size else 0.0,
                mean_abs_err=float(err.mean()) if err.size else 0.0,
                frac_bits=frac,
            ))
            worst_frac = min(worst_frac, frac)
            pair.append(q)
        params.append(tuple(pair))
    # a single Network carries one format tag; record the coarsest grid,
    # which every tensor's own grid refines
    qnet = Network(spec=net.spec, parameters=tuple(params), format=fixed16(worst_frac))
    agreement, deviation = parity_eval(net, qnet, probe_batch)
    report = QuantizationReport(
        format_tag="fixed16",
        tensors=tuple(stats),
        payload_bytes_before=_payload_bytes(net, 4),
        payload_bytes_after=_payload_bytes(net, 2),
        agreement=agreement,
        max_softmax_deviation=deviation,
    )
    return qnet, report


def quantize(net: Network, format_tag: str, probe_batch) -> tuple[Network, QuantizationReport]:
    """Narrow `net` to "float16" or "fixed16" and measure parity on probe_batch."""
    if format_tag == "fixed16":
        return to_fixed16(net, probe_batch)
    if format_tag != "float16":
        raise ValueError(f"unknown quantization format {format_tag!r}")
    qnet = to_float16(net)
    stats = []
    for i, ((w, b), (qw, qb)) in enumerate(zip(net.parameters, qnet.parameters)):
        for arr, qarr, part in ((w, qw, "weight"), (b, qb, "bias")):
            err = np.abs(qarr - arr)
            stats.append(TensorQuantStats(
                name=f"layer{i}.{part}",
                max_abs_err=float(err.max()) if err.size else 0.0,
                mean_abs_err=float(err.mean()) if err.size else 0.0,
                frac_bits=None,
            ))
    agreement, deviation = parity_eval(net, qnet, probe_batch)
    report = QuantizationReport(
        format_tag="float16",
        tensors=tuple(stats),
        payload_bytes_before=_payload_bytes(net, 4),
        payload_bytes_after=_payload_bytes(net, 2),
        agreement=agreement,
        max_softmax_deviation=deviation,
    )
    return qnet, report


def parity_eval(net_a: Network, net_b: Network, batch) -> tuple[float, float]:
    """(argmax agreement rate, max per-sample L-inf softmax distance)."""
    pa = forward(net_a, batch)
    pb = forward(net_b, batch)
    if pa.shape != pb.shape:
        raise ValueError(f"probability shapes differ: {pa.shape} vs {pb.shape}")
    agreement = float((pa.argmax(axis=1) == pb.argmax(axis=1)).mean())
    deviation = float(np.abs(pa - pb).max(axis=1).max()) if len(pa) else 0.0
    return agreement, deviation


_SUMMARY_FIELDS = (
    ("format", lambda r: r.format_tag),
    ("payload_bytes_before", lambda r: str(r.payload_bytes_before)),
    ("payload_bytes_after", lambda r: str(r.payload_bytes_after)),
    ("agreement", lambda r: f"{r.agreement:.6f}"),
    ("max_softmax_deviation", lambda r: f"{r.max_softmax_deviation:.8f}"),
)


def quant_report_text(report: QuantizationReport) -> str:
    """Aligned, human-readable rendering of a quantization report."""
    lines = [f"{name}: {fn(report)}" for name, fn in _SUMMARY_FIELDS]
    lines.append("")
    header = ("tensor", "frac_bits", "max_abs_err", "mean_abs_err")
    rows = [header]
    for t in report.tensors:
        rows.append((t.name, "-" if t.frac_bits is None else str(t.frac_bits),
                     f"{t.max_abs_err:.8f}", f"{t.mean_abs_err:.8f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for row in rows:
        lines.append("  ".join(col.ljust(w) for col, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def quant_report_rows(report: QuantizationReport) -> str:
    """Comma-delimited rendering: summary row, then one row per tensor."""
    lines = [",".join(name for name, _ in _SUMMARY_FIELDS)]
    lines.append(",".join(fn(report) for _, fn in _SUMMARY_FIELDS))
    lines.append("tensor,frac_bits,max_abs_err,mean_abs_err")
    for t in report.tensors:
        frac = "" if t.frac_bits is None else str(t.frac_bits)
        lines.append(f"{t.name},{frac},{t.max_abs_err:.8f},{t.mean_abs_err:.8f}")
    return "\n".join(lines)
