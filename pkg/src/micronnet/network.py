"""Architecture descriptors, the default compact network, weight
initialization, whole-network forward/backward, and the weight-file format.

An :class:`ArchitectureSpec` is a validated, immutable description of a
feed-forward stack: convolutions, max-pools, fully connected layers, and a
single trailing softmax classifier. Every convolution and every fully
connected layer except the classifier is followed by ReLU. A
:class:`Network` binds a spec to concrete parameter arrays plus the scalar
format those parameters are stored in; arithmetic always runs in float32
regardless of storage format.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ModelFormatError, SpecError
from .formats import FLOAT32, ScalarFormat, Tensor, narrow
from .layers import (
    ConvParams,
    PoolParams,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    pool_output_size,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy,
)

CONV = "conv"
POOL = "pool"
FC = "fc"
CLASSIFIER = "softmax_classifier"

_MAGIC = b"MNET"
_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    conv: ConvParams | None = None
    pool: PoolParams | None = None
    out_features: int | None = None
    num_classes: int | None = None

    def __post_init__(self) -> None:
        fields = {
            CONV: self.conv,
            POOL: self.pool,
            FC: self.out_features,
            CLASSIFIER: self.num_classes,
        }
        if self.kind not in fields:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        for kind, value in fields.items():
            if (value is not None) != (kind == self.kind):
                raise SpecError(f"layer kind {self.kind!r} carries the wrong payload")
        if self.kind == FC and self.out_features < 1:
            raise SpecError("fc out_features must be >= 1")
        if self.kind == CLASSIFIER and self.num_classes < 2:
            raise SpecError("classifier needs at least 2 classes")


def conv_layer(out_channels: int, kernel: int | tuple[int, int], stride: int = 1, pad: int = 0) -> LayerSpec:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    try:
        p = ConvParams(out_channels, tuple(kernel), stride, pad)
    except ValueError as e:
        raise SpecError(str(e)) from e
    return LayerSpec(CONV, conv=p)


def pool_layer(kernel: int | tuple[int, int], stride: int) -> LayerSpec:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    try:
        p = PoolParams(tuple(kernel), stride)
    except ValueError as e:
        raise SpecError(str(e)) from e
    return LayerSpec(POOL, pool=p)


def fc_layer(out_features: int) -> LayerSpec:
    return LayerSpec(FC, out_features=out_features)


def classifier_layer(num_classes: int) -> LayerSpec:
    return LayerSpec(CLASSIFIER, num_classes=num_classes)


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        infer_shapes(self)


def infer_shapes(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    """Shapes through the stack: (c, h, w) per map stage, (m,) once flattened.

    The returned list starts with the input shape and has one entry per
    layer after it. Raises SpecError if the chain does not type-check.
    Classifier placement is not checked here — see validate_network_spec —
    so partial stacks can still be sized and counted.
    """
    if len(spec.input_shape) != 3 or any(d < 1 for d in spec.input_shape):
        raise SpecError(f"input shape must be (c, h, w) with positive dims, got {spec.input_shape}")

    shapes: list[tuple[int, ...]] = [tuple(spec.input_shape)]
    cur = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if layer.kind == CONV:
            if len(cur) != 3:
                raise SpecError(f"layer {i}: convolution after flatten")
            c, h, w = cur
            p = layer.conv
            oh = conv_output_size(h, p.kernel[0], p.stride, p.pad)
            ow = conv_output_size(w, p.kernel[1], p.stride, p.pad)
            if oh < 1 or ow < 1:
                raise SpecError(f"layer {i}: conv kernel {p.kernel} too large for {h}x{w}")
            cur = (p.out_channels, oh, ow)
        elif layer.kind == POOL:
            if len(cur) != 3:
                raise SpecError(f"layer {i}: pooling after flatten")
            c, h, w = cur
            p = layer.pool
            if p.kernel[0] > h or p.kernel[1] > w:
                raise SpecError(f"layer {i}: pool kernel {p.kernel} larger than {h}x{w}")
            cur = (c, pool_output_size(h, p.kernel[0], p.stride), pool_output_size(w, p.kernel[1], p.stride))
        elif layer.kind == FC:
            cur = (layer.out_features,)
        else:  # classifier
            cur = (layer.num_classes,)
        shapes.append(cur)
    return shapes


def validate_network_spec(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    """Full network check: chain types plus exactly one trailing classifier."""
    shapes = infer_shapes(spec)
    if not spec.layers or spec.layers[-1].kind != CLASSIFIER:
        raise SpecError("spec must end with a softmax classifier")
    if sum(1 for l in spec.layers if l.kind == CLASSIFIER) != 1:
        raise SpecError("spec must contain exactly one classifier")
    return shapes


def micronnet_default() -> ArchitectureSpec:
    """The optimized default architecture: 48x48 RGB in, 43 classes out."""
    return ArchitectureSpec(
        input_shape=(3, 48, 48),
        layers=(
            conv_layer(1, 1),
            conv_layer(29, 5),
            pool_layer(3, 2),
            conv_layer(59, 3),
            pool_layer(3, 2),
            conv_layer(74, 3),
            pool_layer(3, 2),
            fc_layer(300),
            fc_layer(300),
            classifier_layer(43),
        ),
    )


def parameter_shapes(spec: ArchitectureSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(weight shape, bias shape) for each parametric layer, in order."""
    shapes = infer_shapes(spec)
    out = []
    for prev, layer in zip(shapes, spec.layers):
        if layer.kind == CONV:
            p = layer.conv
            out.append(((p.out_channels, prev[0], p.kernel[0], p.kernel[1]), (p.out_channels,)))
        elif layer.kind == FC:
            out.append(((int(np.prod(prev)), layer.out_features), (layer.out_features,)))
        elif layer.kind == CLASSIFIER:
            out.append(((int(np.prod(prev)), layer.num_classes), (layer.num_classes,)))
    return out


@dataclass(frozen=True, eq=False)
class Network:
    spec: ArchitectureSpec
    parameters: tuple[tuple[np.ndarray, np.ndarray], ...]
    format: ScalarFormat = FLOAT32

    def __post_init__(self) -> None:
        validate_network_spec(self.spec)
        want = parameter_shapes(self.spec)
        if len(self.parameters) != len(want):
            raise SpecError(f"expected {len(want)} parameter pairs, got {len(self.parameters)}")
        checked = []
        for (w, b), (ws, bs) in zip(self.parameters, want):
            w = np.ascontiguousarray(w, dtype=np.float32)
            b = np.ascontiguousarray(b, dtype=np.float32)
            if w.shape != ws or b.shape != bs:
                raise SpecError(f"parameter shapes {w.shape}/{b.shape} do not match spec {ws}/{bs}")
            checked.append((w, b))
        object.__setattr__(self, "parameters", tuple(checked))


def build(spec: ArchitectureSpec, seed: int) -> Network:
    """He-initialized network: W ~ N(0, 2/fan_in), biases zero; deterministic."""
    rng = np.random.default_rng(seed)
    params = []
    for ws, bs in parameter_shapes(spec):
        fan_in = int(np.prod(ws[1:])) if len(ws) == 4 else ws[0]
        std = np.sqrt(2.0 / fan_in)
        w = (rng.standard_normal(ws) * std).astype(np.float32)
        params.append((w, np.zeros(bs, dtype=np.float32)))
    return Network(spec=spec, parameters=tuple(params), format=FLOAT32)


def _batch_array(batch) -> np.ndarray:
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"batch must be 4-D (n, c, h, w), got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32)


def _run_forward(net: Network, x: np.ndarray, keep_cache: bool):
    """Logits plus (optionally) the per-layer cache needed for backward."""
    if x.shape[1:] != tuple(net.spec.input_shape):
        raise DimensionError(f"batch shape {x.shape[1:]} does not match spec input {net.spec.input_shape}")
    cache = [] if keep_cache else None
    pi = 0
    cur = x
    for layer in net.spec.layers:
        if layer.kind == CONV:
            w, b = net.parameters[pi]
            pi += 1
            z = conv2d_forward(cur, w, b, layer.conv)
            if keep_cache:
                cache.append(("conv", cur, z, layer.conv))
            cur = relu(z)
        elif layer.kind == POOL:
            out, argmax = maxpool_forward(cur, layer.pool)
            if keep_cache:
                cache.append(("pool", cur.shape, argmax))
            cur = out
        else:
            flat_in = cur if cur.ndim == 2 else cur.reshape(cur.shape[0], -1)
            w, b = net.parameters[pi]
            pi += 1
            z = fc_forward(flat_in, w, b)
            if layer.kind == FC:
                if keep_cache:
                    cache.append(("fc", flat_in, cur.shape, z))
                cur = relu(z)
            else:
                if keep_cache:
                    cache.append(("classifier", flat_in, cur.shape))
                cur = z
    return cur, cache


def forward(net: Network, batch) -> np.ndarray:
    """Class probabilities, shape (n, num_classes); rows sum to 1."""
    logits, _ = _run_forward(net, _batch_array(batch), keep_cache=False)
    return softmax(logits)


def predict(net: Network, batch) -> np.ndarray:
    """Argmax class per sample (ties resolve to the smallest index)."""
    logits, _ = _run_forward(net, _batch_array(batch), keep_cache=False)
    return logits.argmax(axis=1)


def backward(net: Network, batch, labels):
    """Mean cross-entropy loss and its exact parameter gradients.

    Returns (grads, loss) where grads mirrors net.parameters as
    (grad_w, grad_b) pairs.
    """
    x = _batch_array(batch)
    logits, cache = _run_forward(net, x, keep_cache=True)
    per_sample, _, grad_logits = softmax_cross_entropy(logits, labels)
    n = x.shape[0]
    loss = float(per_sample.mean())
    g = grad_logits / np.float32(n)

    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.parameters)
    pi = len(net.parameters)
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "classifier":
            _, flat_in, in_shape = entry
            pi -= 1
            w, _ = net.parameters[pi]
            g, gw, gb = fc_backward(flat_in, w, g)
            grads[pi] = (gw, gb)
            g = g.reshape(in_shape)
        elif kind == "fc":
            _, flat_in, in_shape, z = entry
            pi -= 1
            w, _ = net.parameters[pi]
            g = relu_backward(g, z)
            g, gw, gb = fc_backward(flat_in, w, g)
            grads[pi] = (gw, gb)
            g = g.reshape(in_shape)
        elif kind == "pool":
            _, in_shape, argmax = entry
            g = maxpool_backward(g, argmax, in_shape)
        else:  # conv
            _, x_in, z, p = entry
            pi -= 1
            w, _ = net.parameters[pi]
            g = relu_backward(g, z)
            g, gw, gb = conv2d_backward(x_in, w, g, p)
            grads[pi] = (gw, gb)
    return tuple(grads), loss


# --- serialization ---------------------------------------------------------

def _layer_to_dict(layer: LayerSpec) -> dict:
    if layer.kind == CONV:
        p = layer.conv
        return {"kind": CONV, "out_channels": p.out_channels, "kernel": list(p.kernel),
                "stride": p.stride, "pad": p.pad}
    if layer.kind == POOL:
        p = layer.pool
        return {"kind": POOL, "kernel": list(p.kernel), "stride": p.stride}
    if layer.kind == FC:
        return {"kind": FC, "out_features": layer.out_features}
    return {"kind": CLASSIFIER, "num_classes": layer.num_classes}


def _layer_from_dict(d: dict) -> LayerSpec:
    kind = d.get("kind")
    if kind == CONV:
        return conv_layer(int(d["out_channels"]), tuple(int(k) for k in d["kernel"]),
                          int(d["stride"]), int(d["pad"]))
    if kind == POOL:
        return pool_layer(tuple(int(k) for k in d["kernel"]), int(d["stride"]))
    if kind == FC:
        return fc_layer(int(d["out_features"]))
    if kind == CLASSIFIER:
        return classifier_layer(int(d["num_classes"]))
    raise SpecError(f"unknown layer kind {kind!r}")


def spec_to_dict(spec: ArchitectureSpec) -> dict:
    return {"input_shape": list(spec.input_shape),
            "layers": [_layer_to_dict(l) for l in spec.layers]}


def spec_from_dict(d: dict) -> ArchitectureSpec:
    try:
        layers = tuple(_layer_from_dict(l) for l in d["layers"])
        return ArchitectureSpec(tuple(int(v) for v in d["input_shape"]), layers)
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f"malformed architecture description: {e}") from e


def spec_text(spec: ArchitectureSpec) -> str:
    """Human-readable table, one layer per line: type, kernel, width, input size."""
    shapes = infer_shapes(spec)
    rows = [("layer", "kernel", "out", "input size")]
    for prev, layer in zip(shapes, spec.layers):
        if layer.kind in (FC, CLASSIFIER):
            size = f"1 x {int(np.prod(prev))}"  # these layers see the flattened vector
        else:
            size = " x ".join(str(d) for d in prev)
        if layer.kind == CONV:
            p = layer.conv
            rows.append(("conv", f"{p.kernel[0]} x {p.kernel[1]}", str(p.out_channels), size))
        elif layer.kind == POOL:
            p = layer.pool
            rows.append(("maxpool", f"{p.kernel[0]} x {p.kernel[1]} / {p.stride}", "-", size))
        elif layer.kind == FC:
            rows.append(("fc", "-", str(layer.out_features), size))
        else:
            rows.append(("softmax", "-", str(layer.num_classes), size))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(col.ljust(w) for col, w in zip(row, widths)).rstrip() for row in rows)


def _payload_dtype(fmt: ScalarFormat) -> np.dtype:
    if fmt.tag == "float32":
        return np.dtype("<f4")
    if fmt.tag == "float16":
        return np.dtype("<f2")
    return np.dtype("<i2")


def _flat_tensors(net: Network) -> list[np.ndarray]:
    out = []
    for w, b in net.parameters:
        out.append(w)
        out.append(b)
    return out


def _exact_frac_bits(t: np.ndarray) -> int:
    """Coarsest frac_bits in [1, 14] that encodes `t` losslessly.

    Fixed-point networks carry one format tag but each tensor may sit on
    its own (finer) grid, so the weight file records fractional bits per
    tensor instead of trusting the network-level tag.
    """
    v = t.astype(np.float64)
    for frac in range(1, 15):
        raw = v * float(2**frac)
        if np.abs(raw).max(initial=0.0) <= 32767 and np.array_equal(np.rint(raw), raw):
            return frac
    raise ModelFormatError("parameter values are not representable in fixed16")


def save(net: Network, path) -> None:
    """Write the network to `path` atomically; round trips are bit-exact."""
    fmt = net.format
    dtype = _payload_dtype(fmt)
    tensors = _flat_tensors(net)
    if fmt.tag == "fixed16":
        fracs = [_exact_frac_bits(t) for t in tensors]
    else:
        fracs = [None] * len(tensors)
        for t in tensors:
            grid = narrow(t, fmt)
            if not np.array_equal(grid, t):
                raise ModelFormatError(f"parameter values are not representable in {fmt.tag}")
    header = {
        "format": {"tag": fmt.tag, "frac_bits": fmt.frac_bits},
        "spec": spec_to_dict(net.spec),
        "tensors": [
            {"shape": list(t.shape)} if f is None else {"shape": list(t.shape), "frac_bits": f}
            for t, f in zip(tensors, fracs)
        ],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(hbytes)), hbytes]
    for t, f in zip(tensors, fracs):
        if fmt.tag == "fixed16":
            raw = np.rint(t.astype(np.float64) * float(2**f)).astype(np.int64)
            chunks.append(raw.astype(dtype).tobytes(order="C"))
        else:
            chunks.append(t.astype(dtype).tobytes(order="C"))
    blob = b"".join(chunks)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> Network:
    """Read a network written by save(); raises ModelFormatError on damage."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise ModelFormatError("not a network weight file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise ModelFormatError(f"unsupported weight file version {version}")
    if len(blob) < 12 + hlen:
        raise ModelFormatError("truncated weight file header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
        fdesc = header["format"]
        tag = fdesc["tag"]
        fmt = ScalarFormat(tag, fdesc["frac_bits"] if tag == "fixed16" else None)
        spec = spec_from_dict(header["spec"])
        entries = header["tensors"]
        declared = [tuple(int(d) for d in t["shape"]) for t in entries]
        if tag == "fixed16":
            tensor_fracs = [int(t["frac_bits"]) for t in entries]
            if any(f < 1 or f > 14 for f in tensor_fracs):
                raise ValueError("per-tensor frac_bits out of range")
        else:
            tensor_fracs = [None] * len(entries)
    except (json.JSONDecodeError, SpecError, KeyError, TypeError, ValueError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"malformed weight file header: {e}") from e

    expect = []
    for ws, bs in parameter_shapes(spec):
        expect.append(ws)
        expect.append(bs)
    if declared != expect:
        raise ModelFormatError("declared tensor shapes do not match the architecture")

    dtype = _payload_dtype(fmt)
    need = sum(int(np.prod(s)) for s in declared) * dtype.itemsize
    payload = blob[12 + hlen :]
    if len(payload) != need:
        raise ModelFormatError(f"payload is {len(payload)} bytes, expected {need}")

    offset = 0
    arrays = []
    for s, tfrac in zip(declared, tensor_fracs):
        count = int(np.prod(s))
        raw = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        offset += count * dtype.itemsize
        if fmt.tag == "fixed16":
            arr = (raw.astype(np.float32) / np.float32(2**tfrac)).reshape(s)
        else:
            arr = raw.astype(np.float32).reshape(s)
        arrays.append(arr)
    params = tuple((arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2))
    return Network(spec=spec, parameters=params, format=fmt)
