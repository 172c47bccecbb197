"""Dataset ingestion, preprocessing, augmentation, and synthetic data.

The pipeline mirrors the traffic-sign benchmark layout: per-class folders of
portable-pixmap images, each folder carrying a semicolon-delimited annotation
file (``GT-*.csv``) with one row per image giving the stored size, the region
of interest around the sign, and the class id.  Samples flow through
``crop_resize`` into ``3 x 48 x 48`` float arrays in ``[0, 1]``, optionally
through ``augment`` and ``degrade``, and into the training loop.

A seeded glyph generator (``generate_synthetic`` / ``write_benchmark_tree``)
emits the same sample stream and on-disk layout, so every consumer of the real
benchmark can be exercised without it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color as _skcolor

from .errors import DataError, PlanError, RowError, SampleError

NUM_CLASSES = 43
TARGET_SIZE = 48

_CSV_FIELDS = (
    "Filename",
    "Width",
    "Height",
    "Roi.X1",
    "Roi.Y1",
    "Roi.X2",
    "Roi.Y2",
    "ClassId",
)

# Techniques understood by ``augment``, in application order.
TECHNIQUES = (
    "rotation",
    "shifting",
    "sharpening",
    "gaussian_blur",
    "motion_blur",
    "hsv_jitter",
    "mirroring",
)

# Classes whose signs read the same mirrored left-to-right, so a horizontal
# flip yields another valid example of the same class.  Everything else is
# excluded: flipping a turn arrow or a speed-limit digit would corrupt the
# label.
MIRRORABLE_CLASSES = frozenset({11, 12, 13, 15, 17, 18, 22, 26, 30, 35})


@dataclass(frozen=True)
class ImageSample:
    """One annotated image: 8-bit RGB pixels, inclusive ROI box, class label.

    ``pixels`` is ``(height, width, 3)`` uint8.  ``roi`` is
    ``(x1, y1, x2, y2)`` with inclusive corners inside the image bounds; a
    box with ``x2 < x1`` or ``y2 < y1`` is representable but rejected later
    by ``crop_resize`` as degenerate.
    """

    pixels: np.ndarray
    roi: Tuple[int, int, int, int]
    label: int

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise SampleError(f"pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3:
            raise SampleError(f"pixels must be (h, w, 3), got {px.shape}")
        h, w = px.shape[:2]
        if h < 1 or w < 1:
            raise SampleError("image has no pixels")
        roi = tuple(int(v) for v in self.roi)
        if len(self.roi) != 4:
            raise SampleError("roi must be (x1, y1, x2, y2)")
        x1, y1, x2, y2 = roi
        if not (0 <= x1 < w and 0 <= x2 < w and 0 <= y1 < h and 0 <= y2 < h):
            raise SampleError(f"roi {roi} outside image bounds {(w, h)}")
        if not 0 <= int(self.label) < NUM_CLASSES:
            raise SampleError(f"label {self.label} outside [0, {NUM_CLASSES})")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "roi", roi)
        object.__setattr__(self, "label", int(self.label))


def load_gtsrb(root, split: str) -> Iterator[ImageSample]:
    """Stream samples from a benchmark-layout directory tree.

    ``root/<split>`` is scanned recursively for ``GT-*.csv`` annotation
    files; each is parsed as semicolon-delimited rows of
    ``Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId`` following
    a header line, with image paths resolved relative to the annotation
    file.  Iteration order is deterministic: annotation files sorted by
    path, rows in file order.

    Raises ``DataError`` when no annotation file exists under the split and
    ``RowError`` (with file/line context) for malformed or inconsistent
    rows.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    base = Path(root) / split
    annotations = sorted(base.rglob("GT-*.csv"), key=lambda p: p.as_posix())
    if not annotations:
        raise DataError(f"no annotation files found under {base}")
    for ann in annotations:
        yield from _read_annotation(ann)


def _read_annotation(path: Path) -> Iterator[ImageSample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1:
                if tuple(row) != _CSV_FIELDS:
                    raise RowError(
                        f"{path}:{lineno}: bad header {row!r},"
                        f" expected {list(_CSV_FIELDS)}"
                    )
                continue
            yield _parse_row(path, lineno, row)


def _parse_row(path: Path, lineno: int, row: Sequence[str]) -> ImageSample:
    where = f"{path}:{lineno}"
    if len(row) != len(_CSV_FIELDS):
        raise RowError(f"{where}: expected {len(_CSV_FIELDS)} fields, got {len(row)}")
    name = row[0]
    try:
        width, height, x1, y1, x2, y2, label = (int(v) for v in row[1:])
    except ValueError:
        raise RowError(f"{where}: non-integer field in {row!r}") from None
    img_path = path.parent / name
    if not img_path.is_file():
        raise RowError(f"{where}: image {name!r} not found")
    try:
        with Image.open(img_path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise RowError(f"{where}: unreadable image {name!r}: {exc}") from None
    if pixels.shape[:2] != (height, width):
        raise RowError(
            f"{where}: annotation says {width}x{height},"
            f" file is {pixels.shape[1]}x{pixels.shape[0]}"
        )
    try:
        return ImageSample(pixels, (x1, y1, x2, y2), label)
    except SampleError as exc:
        raise RowError(f"{where}: {exc}") from None


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize ``(h, w, c)`` float32 with corner-aligned bilinear sampling.

    Output corners sample the exact source corners, so upscaling preserves
    corner pixel values and a same-size call is an identity.
    """
    h, w = img.shape[:2]
    ys = np.linspace(0.0, h - 1.0, out_h, dtype=np.float64)
    xs = np.linspace(0.0, w - 1.0, out_w, dtype=np.float64)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    # a + w * (b - a) instead of (1 - w) * a + w * b: a zero-weight sample
    # and a constant image both come through bit-exact.
    tl = img[y0][:, x0]
    top = tl + (img[y0][:, x1] - tl) * wx
    bl = img[y1][:, x0]
    bot = bl + (img[y1][:, x1] - bl) * wx
    return top + (bot - top) * wy


def crop_resize(sample: ImageSample) -> np.ndarray:
    """Crop the sample to its ROI and resize to ``(3, 48, 48)`` in [0, 1].

    The ROI corners are inclusive.  A zero-area box raises ``SampleError``.
    When the crop is already 48 x 48 the pixels pass through unresampled, so
    the result equals ``pixels / 255`` exactly.
    """
    x1, y1, x2, y2 = sample.roi
    if x2 < x1 or y2 < y1:
        raise SampleError(f"degenerate roi {sample.roi}")
    crop = sample.pixels[y1 : y2 + 1, x1 : x2 + 1].astype(np.float32)
    if crop.shape[:2] != (TARGET_SIZE, TARGET_SIZE):
        crop = _bilinear_resize(crop, TARGET_SIZE, TARGET_SIZE)
    out = crop.transpose(2, 0, 1) / np.float32(255.0)
    return np.ascontiguousarray(out, dtype=np.float32)


@dataclass(frozen=True)
class AugmentPolicy:
    """Which augmentation techniques run and how strong they may get.

    Each enabled technique is independently switched on or off per draw and
    its magnitude sampled uniformly up to the configured bound.  Bounds are
    capped at the documented maxima: rotation 15 degrees, shift 10% per
    axis, unsharp amount 0.5, Gaussian sigma 1.5 px, motion-blur length
    5 px, HSV jitter 10% per channel.  Mirroring only ever applies to
    classes in ``mirror_classes``.
    """

    enabled: frozenset = frozenset()
    rotation_deg: float = 15.0
    shift_frac: float = 0.10
    sharpen_amount: float = 0.5
    blur_sigma: float = 1.5
    motion_length: int = 5
    hsv_frac: float = 0.10
    mirror_classes: frozenset = MIRRORABLE_CLASSES
    seed: int = 0

    def __post_init__(self) -> None:
        enabled = frozenset(self.enabled)
        unknown = enabled - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"unknown technique(s) {sorted(unknown)}")
        bounds = (
            ("rotation_deg", self.rotation_deg, 15.0),
            ("shift_frac", self.shift_frac, 0.10),
            ("sharpen_amount", self.sharpen_amount, 0.5),
            ("blur_sigma", self.blur_sigma, 1.5),
            ("motion_length", self.motion_length, 5),
            ("hsv_frac", self.hsv_frac, 0.10),
        )
        for name, value, cap in bounds:
            if not 0 <= value <= cap:
                raise ValueError(f"{name} must be in [0, {cap}], got {value}")
        object.__setattr__(self, "enabled", enabled)
        object.__setattr__(self, "mirror_classes", frozenset(self.mirror_classes))


def _motion_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Normalized line kernel through the center at the given angle."""
    theta = np.deg2rad(angle_deg)
    k = np.zeros((length, length), dtype=np.float64)
    c = (length - 1) / 2.0
    for t in np.linspace(-c, c, 2 * length + 1):
        y = c + t * np.sin(theta)
        x = c + t * np.cos(theta)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for oy, wy in ((0, 1.0 - fy), (1, fy)):
            for ox, wx in ((0, 1.0 - fx), (1, fx)):
                yy, xx = y0 + oy, x0 + ox
                if wy * wx > 0.0 and 0 <= yy < length and 0 <= xx < length:
                    k[yy, xx] += wy * wx
    return (k / k.sum()).astype(np.float32)


def augment(
    tensor: np.ndarray,
    policy: AugmentPolicy,
    draw_seed: int,
    label: Optional[int] = None,
) -> np.ndarray:
    """Apply one random draw of the policy to a ``(3, 48, 48)`` image.

    The draw is fully determined by ``(policy, draw_seed)``: the same pair
    always yields the same output.  With no techniques enabled (or when
    every sampled magnitude is zero) the input comes back unchanged.
    ``label`` gates mirroring; with ``label=None`` mirroring never fires.
    Output stays clamped to [0, 1].
    """
    x = np.asarray(tensor, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, h, w) image, got {x.shape}")
    rng = np.random.default_rng([int(policy.seed), int(draw_seed)])
    out = x.copy()
    h, w = out.shape[1:]

    for name in TECHNIQUES:
        active = name in policy.enabled
        # Draws are consumed for every enabled technique whether or not the
        # coin lands on "apply", so one technique's outcome never shifts
        # another's randomness.
        if not active:
            continue
        apply_it = rng.random() < 0.5

        if name == "rotation":
            angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg)
            if apply_it and angle != 0.0:
                out = ndimage.rotate(
                    out, angle, axes=(2, 1), reshape=False, order=1, mode="nearest"
                )
        elif name == "shifting":
            dy = rng.uniform(-policy.shift_frac, policy.shift_frac) * h
            dx = rng.uniform(-policy.shift_frac, policy.shift_frac) * w
            if apply_it and (dy != 0.0 or dx != 0.0):
                out = ndimage.shift(out, (0.0, dy, dx), order=1, mode="nearest")
        elif name == "sharpening":
            amount = rng.uniform(0.0, policy.sharpen_amount)
            if apply_it and amount != 0.0:
                blurred = ndimage.gaussian_filter(out, sigma=(0.0, 1.0, 1.0))
                out = np.clip(out + amount * (out - blurred), 0.0, 1.0)
        elif name == "gaussian_blur":
            sigma = rng.uniform(0.0, policy.blur_sigma)
            if apply_it and sigma != 0.0:
                out = ndimage.gaussian_filter(out, sigma=(0.0, sigma, sigma))
        elif name == "motion_blur":
            angle = rng.uniform(0.0, 180.0)
            length = int(rng.integers(2, policy.motion_length + 1)) if policy.motion_length >= 2 else 0
            if apply_it and length >= 2:
                kernel = _motion_kernel(length, angle)
                out = ndimage.convolve(out, kernel[None, :, :], mode="nearest")
        elif name == "hsv_jitter":
            jitter = rng.uniform(-policy.hsv_frac, policy.hsv_frac, size=3)
            if apply_it and np.any(jitter != 0.0):
                hsv = _skcolor.rgb2hsv(np.clip(out, 0.0, 1.0).transpose(1, 2, 0))
                hsv[..., 0] = (hsv[..., 0] + jitter[0]) % 1.0
                hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + jitter[1]), 0.0, 1.0)
                hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + jitter[2]), 0.0, 1.0)
                out = _skcolor.hsv2rgb(hsv).transpose(2, 0, 1)
        elif name == "mirroring":
            eligible = label is not None and int(label) in policy.mirror_classes
            if apply_it and eligible:
                out = out[:, :, ::-1]

    out = np.clip(out, 0.0, 1.0)
    return np.ascontiguousarray(out, dtype=np.float32)


def balance_plan(histogram, target: int) -> dict:
    """Minimal per-class augmentation multiplicities reaching ``target``.

    ``histogram`` maps class id to original sample count.  The returned
    mapping gives, per class, how many augmented copies of each original
    are needed so that originals plus copies reach at least ``target``
    (e.g. 210 originals against a 2100 target need 9 copies each).
    Classes already at or above target get 0.  A class with no originals
    cannot be balanced and raises ``PlanError``.
    """
    if target < 1:
        raise ValueError(f"target must be positive, got {target}")
    plan = {}
    for cls in sorted(histogram):
        count = int(histogram[cls])
        if count < 0:
            raise PlanError(f"class {cls} has negative count {count}")
        if count == 0:
            raise PlanError(f"class {cls} has no samples to augment")
        plan[int(cls)] = max(0, -(-target // count) - 1)
    return plan


def degrade(tensor: np.ndarray, sigma_pct: float, seed: int) -> np.ndarray:
    """Add clamped Gaussian pixel noise of standard deviation ``sigma_pct``%.

    Noise is drawn i.i.d. per element with standard deviation
    ``sigma_pct / 100`` of the full intensity range, added, and the result
    clamped back to [0, 1].  ``sigma_pct=0`` returns the input unchanged;
    negative values raise ``ValueError``.
    """
    x = np.asarray(tensor, dtype=np.float32)
    if sigma_pct < 0:
        raise ValueError(f"sigma_pct must be >= 0, got {sigma_pct}")
    if sigma_pct == 0:
        return x.copy()
    noise = np.random.default_rng(seed).normal(0.0, sigma_pct / 100.0, size=x.shape)
    return np.clip(x + noise.astype(np.float32), 0.0, 1.0)


# --------------------------------------------------------------------------
# Synthetic glyph data
#
# 43 classes laid out on a 7-shapes x 7-colors grid (the last six of the 49
# combinations are unused).  Class identity is carried jointly by geometry
# and hue.  The colors form a luminance ladder whose adjacent ratios exceed
# the per-sample shade jitter, so the palette stays separable even through
# a single learned spectral projection, not just in full RGB.

_GLYPH_COLORS = (
    (40, 30, 190),
    (215, 30, 35),
    (200, 60, 200),
    (60, 205, 60),
    (250, 150, 40),
    (90, 230, 230),
    (240, 240, 240),
)

_GLYPH_SHAPES = ("square", "disc", "triangle", "diamond", "cross", "xcross", "ring")


def _glyph_mask(shape_id: int, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - cy
    dx = xx - cx
    name = _GLYPH_SHAPES[shape_id]
    if name == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= radius
    if name == "disc":
        return dx * dx + dy * dy <= radius * radius
    if name == "triangle":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)
    if name == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    if name == "cross":
        arm = radius / 3.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= radius)
        )
    if name == "xcross":
        # diagonal cross: distinct from the upright cross even after the
        # ROI crop normalizes overall scale and aspect
        arm = radius / 3.0
        u = np.abs(dx + dy) * (np.sqrt(2.0) / 2.0)
        v = np.abs(dx - dy) * (np.sqrt(2.0) / 2.0)
        box = np.maximum(np.abs(dx), np.abs(dy)) <= radius
        return box & ((u <= arm) | (v <= arm))
    if name == "ring":
        rr = np.sqrt(dx * dx + dy * dy)
        return (rr <= radius) & (rr >= radius / 2.0)
    raise ValueError(f"unknown shape id {shape_id}")


def generate_synthetic(
    samples_per_class: int, seed: int = 0, classes: int = NUM_CLASSES
) -> Iterator[ImageSample]:
    """Yield seeded glyph samples: ``samples_per_class`` for each class.

    Each sample renders its class glyph (shape = class mod 7, color =
    class div 7) at a jittered position and scale on a dark noisy
    background, with per-sample brightness variation, at a random stored
    size.  The stream is deterministic in ``seed`` and ordered class-major.
    """
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be positive")
    if not 1 <= classes <= NUM_CLASSES:
        raise ValueError(f"classes must be in [1, {NUM_CLASSES}]")
    rng = np.random.default_rng(seed)
    for label in range(classes):
        shape_id = label % len(_GLYPH_SHAPES)
        base_color = np.array(_GLYPH_COLORS[label // len(_GLYPH_SHAPES)], dtype=np.float32)
        for _ in range(samples_per_class):
            size = int(rng.integers(36, 72))
            img = rng.uniform(0.0, 55.0, size=(size, size, 3)).astype(np.float32)
            radius = size * rng.uniform(0.26, 0.36)
            cy = size / 2.0 + rng.uniform(-0.08, 0.08) * size
            cx = size / 2.0 + rng.uniform(-0.08, 0.08) * size
            mask = _glyph_mask(shape_id, size, cy, cx, radius)
            shade = rng.uniform(0.9, 1.0)
            img[mask] = base_color * shade + rng.uniform(-8.0, 8.0, size=3)
            pixels = np.clip(img, 0.0, 255.0).astype(np.uint8)
            pad = 3
            x1 = max(0, int(np.floor(cx - radius)) - pad)
            y1 = max(0, int(np.floor(cy - radius)) - pad)
            x2 = min(size - 1, int(np.ceil(cx + radius)) + pad)
            y2 = min(size - 1, int(np.ceil(cy + radius)) + pad)
            yield ImageSample(pixels, (x1, y1, x2, y2), label)


def write_benchmark_tree(samples: Iterable[ImageSample], root, split: str) -> int:
    """Write samples as a benchmark-layout tree under ``root/<split>``.

    Creates one directory per class containing its images as binary
    portable pixmaps plus a ``GT-<class>.csv`` annotation file, readable
    back via ``load_gtsrb``.  Returns the number of samples written.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    base = Path(root) / split
    rows: dict = {}
    for sample in samples:
        rows.setdefault(sample.label, []).append(sample)
    written = 0
    for label in sorted(rows):
        class_dir = base / f"{label:05d}"
        class_dir.mkdir(parents=True, exist_ok=True)
        lines = [";".join(_CSV_FIELDS)]
        for idx, sample in enumerate(rows[label]):
            name = f"{idx:05d}.ppm"
            h, w = sample.pixels.shape[:2]
            x1, y1, x2, y2 = sample.roi
            Image.fromarray(sample.pixels, mode="RGB").save(class_dir / name)
            lines.append(f"{name};{w};{h};{x1};{y1};{x2};{y2};{sample.label}")
            written += 1
        (class_dir / f"GT-{label:05d}.csv").write_text("\n".join(lines) + "\n")
    return written


def stack_samples(samples: Iterable[ImageSample]):
    """Crop-resize a sample stream into ``(n, 3, 48, 48)`` plus labels."""
    images = []
    labels = []
    for sample in samples:
        images.append(crop_resize(sample))
        labels.append(sample.label)
    if not images:
        raise DataError("no samples to stack")
    return np.stack(images), np.asarray(labels, dtype=np.int64)
