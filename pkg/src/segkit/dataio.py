"""Dataset I/O and synthetic data generation.

Interchange formats are deliberately minimal and bit-exact:
  - binary PNM images: P6 (RGB, maxval 255) for images, P5 (one byte per
    pixel = class id) for label masks
  - plain TSV manifests: sample_id, image_path, mask_path, robot_id, split

Synthetic scenes (flat background plus colored rectangles / disks /
triangles, one class per shape) stand in for real outdoor imagery; their
masks are exact by construction.  Corruption generators produce the
exposure-shift and label-noise fixtures used by the correction and
denoising experiments.
"""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadFieldCountError,
    BadMagicError,
    MaxvalUnsupportedError,
    TruncatedError,
    UnknownSplitError,
)
from .rng import SplitMix64
from .tensor import Tensor

__all__ = [
    "SampleRecord",
    "SynthSpec",
    "ROBOTS",
    "read_pnm",
    "write_pnm",
    "load_manifest",
    "save_manifest",
    "load_pairs",
    "synth_dataset",
    "corrupt_gamma_region",
    "corrupt_labels",
]

ROBOTS = ["MuCAR-3", "ALICE", "Spot v2", "Spot v1"]
SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    sample_id: str
    image_path: str
    mask_path: str
    robot_id: str
    split: str
    error_rate: Optional[float] = None


@dataclass
class SynthSpec:
    seed: int = 0
    n_samples: int = 32
    n_val: int = 0
    n_test: int = 0
    image_size: tuple = (48, 48)
    n_classes: int = 3
    shapes_min: int = 1
    shapes_max: int = 3
    noise: float = 0.08
    twin_delta: float = 0.0  # >0: classes 1 and 2 get near-identical colors
    position_banded: bool = False  # each shape class confined to its own horizontal band
    corruption: str = "none"  # none | gamma_region | label_noise
    label_noise_p: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 <= self.label_noise_p <= 1.0:
            raise ValueError("label_noise_p must be in [0,1]")
        if self.corruption not in ("none", "gamma_region", "label_noise"):
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if self.n_val + self.n_test > self.n_samples:
            raise ValueError("n_val + n_test exceeds n_samples")


# -- PNM --------------------------------------------------------------------


def _parse_pnm_header(buf: bytes):
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"unsupported magic {magic!r}")
    vals = []
    i = 2
    while len(vals) < 3:
        if i >= len(buf):
            raise TruncatedError("header ended early")
        c = buf[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
        elif c.isdigit():
            j = i
            while j < len(buf) and buf[j:j + 1].isdigit():
                j += 1
            vals.append(int(buf[i:j]))
            i = j
        else:
            raise BadMagicError(f"unexpected header byte {c!r}")
    if i >= len(buf) or buf[i:i + 1] not in b" \t\r\n":
        raise TruncatedError("missing whitespace after maxval")
    i += 1
    width, height, maxval = vals
    if maxval != 255:
        raise MaxvalUnsupportedError(f"maxval {maxval} unsupported")
    return magic, width, height, i


def read_pnm(path):
    """Read a binary PNM file.

    P6 -> Tensor[1,3,H,W], f32, values scaled to [0,1].
    P5 -> uint8 ndarray [H,W] of class ids (unscaled).
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, start = _parse_pnm_header(buf)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = buf[start:start + need]
    if len(raster) < need:
        raise TruncatedError(f"raster has {len(raster)} bytes, needs {need}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if magic == b"P5":
        return arr.reshape(height, width).copy()
    img = arr.reshape(height, width, 3).astype(np.float32) / 255.0
    return Tensor(img.transpose(2, 0, 1)[None, :, :, :])


def write_pnm(path, data):
    """Write a binary PNM file; the inverse of read_pnm, byte-exact.

    Integer [H,W] arrays become P5 masks; float images (Tensor or ndarray,
    [1,3,H,W] or [3,H,W], values in [0,1]) become P6 with round-half-up.
    """
    if isinstance(data, Tensor):
        data = data.data
    data = np.asarray(data)
    if data.ndim == 2 and np.issubdtype(data.dtype, np.integer):
        h, w = data.shape
        body = data.astype(np.uint8).tobytes()
        header = b"P5\n%d %d\n255\n" % (w, h)
    else:
        if data.ndim == 4:
            data = data[0]
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError(f"expected [3,H,W] image, got {data.shape}")
        scaled = np.floor(data.astype(np.float64) * 255.0 + 0.5)
        bytes_img = np.clip(scaled, 0, 255).astype(np.uint8)
        h, w = data.shape[1], data.shape[2]
        body = bytes_img.transpose(1, 2, 0).tobytes()
        header = b"P6\n%d %d\n255\n" % (w, h)
    with open(path, "wb") as fh:
        fh.write(header + body)


# -- manifests --------------------------------------------------------------


def load_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise BadFieldCountError(f"line {lineno}: expected 5 fields, got {len(fields)}")
            sid, img, mask, robot, split = fields
            if split not in SPLITS:
                raise UnknownSplitError(f"line {lineno}: unknown split {split!r}")
            records.append(SampleRecord(
                sample_id=sid,
                image_path=img if os.path.isabs(img) else os.path.join(base, img),
                mask_path=mask if os.path.isabs(mask) else os.path.join(base, mask),
                robot_id=robot,
                split=split,
            ))
    return records


def save_manifest(path, records, relative_to=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# sample_id\timage_path\tmask_path\trobot_id\tsplit\n")
        for r in records:
            img, mask = r.image_path, r.mask_path
            if relative_to is not None:
                img = os.path.relpath(img, relative_to)
                mask = os.path.relpath(mask, relative_to)
            fh.write(f"{r.sample_id}\t{img}\t{mask}\t{r.robot_id}\t{r.split}\n")


def load_pairs(records):
    """Load (image [1,3,H,W] f32 ndarray, mask [H,W] int ndarray) pairs."""
    pairs = []
    for r in records:
        img = read_pnm(r.image_path).data
        mask = read_pnm(r.mask_path).astype(np.int64)
        pairs.append((img, mask))
    return pairs


# -- synthetic scenes -------------------------------------------------------


def class_palette(n_classes, twin_delta=0.0):
    """Distinct base colors per class; background (class 0) is mid-gray.

    twin_delta > 0 pulls the colors of classes 1 and 2 within twin_delta of
    each other, so telling them apart needs spatial context, not just color.
    """
    colors = np.zeros((n_classes, 3), dtype=np.float64)
    colors[0] = (0.45, 0.45, 0.45)
    for k in range(1, n_classes):
        hue = ((k - 1) * 0.618033988749895) % 1.0
        colors[k] = _hsv_to_rgb(hue, 0.85, 0.85)
    if twin_delta > 0.0 and n_classes >= 3:
        colors[2] = np.clip(colors[1] + twin_delta, 0.0, 1.0)
    return colors


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _paint_shape(mask, rng, h, w, y_lo=0, y_hi=None):
    """Return a boolean region for one random shape placed within rows
    [y_lo, y_hi)."""
    if y_hi is None:
        y_hi = h
    bh = y_hi - y_lo
    kind = rng.randint(0, 3)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # rectangle
        rh = rng.randint(max(2, bh // 6), max(3, bh // 2))
        rw = rng.randint(max(2, w // 6), max(3, w // 2))
        y0 = y_lo + rng.randint(0, bh - rh)
        x0 = rng.randint(0, w - rw)
        return (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
    if kind == 1:  # disk
        r = rng.randint(max(2, bh // 8), max(3, bh // 4))
        cy = y_lo + rng.randint(r, bh - r)
        cx = rng.randint(r, w - r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # triangle: three random vertices, filled via half-plane tests
    pts = [(y_lo + rng.randint(0, bh), rng.randint(0, w)) for _ in range(3)]
    (ay, ax), (by, bx), (cy, cx) = pts
    d1 = (xx - bx) * (ay - by) - (ax - bx) * (yy - by)
    d2 = (xx - cx) * (by - cy) - (bx - cx) * (yy - cy)
    d3 = (xx - ax) * (cy - ay) - (cx - ax) * (yy - ay)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def generate_sample(seed, spec: SynthSpec):
    """One synthetic scene: (image [3,H,W] f32, mask [H,W] int64, area ledger).

    The ledger maps class id -> painted pixel count, maintained incrementally
    while painting (not recounted from the mask afterwards).
    """
    h, w = spec.image_size
    rng = SplitMix64(seed)
    mask = np.zeros((h, w), dtype=np.int64)
    ledger = {k: 0 for k in range(spec.n_classes)}
    ledger[0] = h * w
    n_shapes = rng.randint(spec.shapes_min, spec.shapes_max + 1)
    n_bands = spec.n_classes - 1
    for _ in range(n_shapes):
        cls = rng.randint(1, spec.n_classes)
        if spec.position_banded:
            y_lo = (cls - 1) * h // n_bands
            y_hi = cls * h // n_bands
            region = _paint_shape(mask, rng, h, w, y_lo, y_hi)
        else:
            region = _paint_shape(mask, rng, h, w)
        overwritten, counts = np.unique(mask[region], return_counts=True)
        for old, cnt in zip(overwritten, counts):
            ledger[int(old)] -= int(cnt)
        ledger[cls] += int(region.sum())
        mask[region] = cls
    palette = class_palette(spec.n_classes, spec.twin_delta)
    image = palette[mask].transpose(2, 0, 1)
    noise = rng.uniform_array((3, h, w), -spec.noise, spec.noise)
    image = np.clip(image + noise, 0.0, 1.0).astype(np.float32)
    return image, mask, ledger


def synth_dataset(spec: SynthSpec, out_dir):
    """Generate a dataset on disk: images/, masks/, manifest.tsv.

    Deterministic: the same spec always yields bitwise-identical files.
    Returns (records, ledgers).
    """
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    base = SplitMix64(spec.seed)
    sample_seeds = [base.next_u64() for _ in range(spec.n_samples)]
    n_train = spec.n_samples - spec.n_val - spec.n_test
    records, ledgers = [], []
    for i, sseed in enumerate(sample_seeds):
        image, mask, ledger = generate_sample(sseed, spec)
        if spec.corruption == "gamma_region":
            image = corrupt_gamma_region(image, sseed ^ 0xC0FFEE)
        elif spec.corruption == "label_noise":
            mask, _ = corrupt_labels(mask, spec.label_noise_p, sseed ^ 0xBADCAB,
                                     n_classes=spec.n_classes)
        sid = f"s{i:04d}"
        img_path = os.path.join(img_dir, sid + ".ppm")
        mask_path = os.path.join(mask_dir, sid + ".pgm")
        write_pnm(img_path, image)
        write_pnm(mask_path, mask.astype(np.uint8))
        split = "train" if i < n_train else ("val" if i < n_train + spec.n_val else "test")
        records.append(SampleRecord(
            sample_id=sid, image_path=img_path, mask_path=mask_path,
            robot_id=ROBOTS[i % len(ROBOTS)], split=split,
        ))
        ledgers.append(ledger)
    save_manifest(os.path.join(out_dir, "manifest.tsv"), records, relative_to=out_dir)
    return records, ledgers


# -- corruption generators --------------------------------------------------


def corrupt_gamma_region(image, seed, gammas=(0.4, 2.5)):
    """Apply a per-channel gamma drawn from ``gammas`` inside a random
    axis-aligned region covering 25-75% of the image area."""
    arr = np.asarray(image, dtype=np.float32)
    squeeze = arr.ndim == 4
    if squeeze:
        arr = arr[0]
    _, h, w = arr.shape
    rng = SplitMix64(seed)
    # side fractions in [0.5, 0.866] give area fractions in [0.25, 0.75]
    fy = rng.uniform(0.5, 0.866)
    fx = rng.uniform(0.5, 0.866)
    rh = max(1, int(round(fy * h)))
    rw = max(1, int(round(fx * w)))
    y0 = rng.randint(0, h - rh + 1)
    x0 = rng.randint(0, w - rw + 1)
    out = arr.copy()
    for c in range(arr.shape[0]):
        g = gammas[rng.randint(0, len(gammas))]
        patch = out[c, y0:y0 + rh, x0:x0 + rw]
        out[c, y0:y0 + rh, x0:x0 + rw] = np.power(patch, g)
    return out[None] if squeeze else out


def corrupt_labels(mask, p, seed, n_classes):
    """With probability p, overwrite a random rectangular region with a wrong
    class.  Returns (noisy mask, boolean corruption map of changed pixels)."""
    mask = np.asarray(mask)
    rng = SplitMix64(seed)
    changed = np.zeros(mask.shape, dtype=bool)
    if p <= 0.0 or rng.uniform() >= p:
        return mask.copy(), changed
    h, w = mask.shape
    out = mask.copy()
    best = None
    for _ in range(100):
        rh = rng.randint(max(1, h // 2), max(2, 9 * h // 10))
        rw = rng.randint(max(1, w // 2), max(2, 9 * w // 10))
        y0 = rng.randint(0, h - rh + 1)
        x0 = rng.randint(0, w - rw + 1)
        cls = rng.randint(0, n_classes)
        region = np.zeros_like(changed)
        region[y0:y0 + rh, x0:x0 + rw] = True
        diff = region & (out != cls)
        # a corruption should be substantial: at least 20% of pixels flipped
        if diff.sum() >= max(1, (h * w) // 5):
            out[region] = cls
            return out, diff
        if diff.any() and best is None:
            best = (region, diff, cls)
    if best is not None:
        region, diff, cls = best
        out[region] = cls
        return out, diff
    return out, changed
