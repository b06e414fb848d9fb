"""Image decoding, preprocessing, directory ingestion, and synthetic data.

Images travel as binary PPM (P6, maxval 255, RGB). Class labels come from
the filename prefix: ``exp.*`` is a distorted frame, ``pri.*`` a pristine
one. The synthetic generator writes matched pristine/distorted pairs where
the distortion is a seeded exposure-value shift ``v' = clamp(v * 2^EV)``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FormatError, LabelingError, UsageError
from .tensor import FLOAT32, Tensor

_WHITESPACE = b" \t\n\r\x0b\x0c"
_NAME_RE = re.compile(r"^(pri|exp)\.", re.IGNORECASE)
MANIFEST_NAME = "manifest.tsv"


class LabelClass(Enum):
    """The two classes; the value is the one-hot index."""

    EXPOSURE = 0
    PRISTINE = 1


@dataclass
class ImageSample:
    """A preprocessed image: (h, w, 3) float pixels in [0, 1] plus label."""

    pixels: Tensor
    label: LabelClass
    source_name: str


@dataclass
class Dataset:
    samples: list = field(default_factory=list)

    def __post_init__(self):
        sizes = {s.pixels.shape for s in self.samples}
        if len(sizes) > 1:
            raise UsageError(f"samples have mixed sizes: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self) -> dict:
        counts = {cls: 0 for cls in LabelClass}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices])

    def stack(self, indices=None, dtype=FLOAT32):
        """Materialize (pixels, one-hot targets) arrays for the given rows."""
        if indices is None:
            indices = range(len(self.samples))
        x = np.stack([self.samples[i].pixels for i in indices]).astype(dtype)
        y = np.stack([one_hot(self.samples[i].label) for i in indices]).astype(dtype)
        return x, y


# ---------------------------------------------------------------------------
# PPM (P6) codec


def _skip_separators(data: bytes, pos: int) -> int:
    while pos < len(data):
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos] == ord("#"):
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    return pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_separators(data, pos)
    start = pos
    while pos < len(data) and data[pos] in b"0123456789":
        pos += 1
    if pos == start:
        raise FormatError(f"expected {what} at byte {start}")
    return int(data[start:pos]), pos


def decode_ppm(data: bytes) -> Tensor:
    """Parse a binary P6 PPM (maxval 255) into an (h, w, 3) uint8 array."""
    if data[:2] != b"P6":
        raise FormatError(f"bad magic {data[:2]!r} at byte 0, expected b'P6'")
    width, pos = _read_int(data, 2, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte {pos - len(str(maxval))}")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError(f"expected single whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload at byte {pos + len(payload)}: "
            f"need {expected} bytes, have {len(payload)}"
        )
    if len(data) > pos + expected:
        raise FormatError(f"trailing data after payload at byte {pos + expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(image: Tensor) -> bytes:
    """Serialize an (h, w, 3) uint8 array as a canonical binary P6 PPM."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise UsageError(f"expected (h, w, 3) image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise UsageError(f"expected uint8 pixels, got {image.dtype}")
    h, w = image.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image).tobytes()


# ---------------------------------------------------------------------------
# preprocessing


def resize_bilinear(image: Tensor, target_h: int, target_w: int) -> Tensor:
    """Bilinear resize with half-pixel-center coordinate mapping."""
    if target_h < 1 or target_w < 1:
        raise UsageError(f"bad target size {target_h}x{target_w}")
    src_h, src_w = image.shape[:2]
    if (src_h, src_w) == (target_h, target_w):
        return image.copy()

    def axis_coords(src: int, dst: int):
        centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        centers = np.clip(centers, 0.0, src - 1)
        lo = np.floor(centers).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, centers - lo

    y0, y1, wy = axis_coords(src_h, target_h)
    x0, x1, wx = axis_coords(src_w, target_w)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx)[None, :, None] + img[y0][:, x1] * wx[None, :, None]
    bot = img[y1][:, x0] * (1 - wx)[None, :, None] + img[y1][:, x1] * wx[None, :, None]
    out = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    if image.dtype == np.uint8:
        return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


def to_float_scaled(raw: Tensor) -> Tensor:
    """Map 8-bit pixel values to float32 in [0, 1] by dividing by 255."""
    return raw.astype(FLOAT32) / FLOAT32(255)


def label_from_filename(name: str) -> LabelClass:
    base = os.path.basename(name)
    m = _NAME_RE.match(base)
    if m is None:
        raise LabelingError(
            f"cannot label {name!r}: expected a 'pri.' or 'exp.' prefix"
        )
    return LabelClass.EXPOSURE if m.group(1).lower() == "exp" else LabelClass.PRISTINE


def one_hot(label: LabelClass) -> Tensor:
    out = np.zeros(len(LabelClass), dtype=FLOAT32)
    out[label.value] = 1.0
    return out


def load_directory(path: str, target_size) -> Dataset:
    """Ingest every PPM in a directory, sorted by filename.

    Per file: decode -> resize to target -> scale to [0, 1] -> label from
    filename. The generator's manifest.tsv sidecar and dotfiles are
    ignored; any other unreadable or ill-named file fails the whole load.
    """
    if isinstance(target_size, int):
        target_size = (target_size, target_size)
    names = sorted(
        n for n in os.listdir(path)
        if os.path.isfile(os.path.join(path, n))
        and not n.startswith(".")
        and n != MANIFEST_NAME
    )
    if not names:
        raise UsageError(f"no image files in {path!r}")
    labels = [label_from_filename(n) for n in names]
    samples = []
    for name, label in zip(names, labels):
        with open(os.path.join(path, name), "rb") as fh:
            try:
                raw = decode_ppm(fh.read())
            except FormatError as exc:
                raise FormatError(f"{name}: {exc}") from exc
        resized = resize_bilinear(raw, target_size[0], target_size[1])
        samples.append(ImageSample(to_float_scaled(resized), label, name))
    return Dataset(samples)


# ---------------------------------------------------------------------------
# synthetic exposure-distortion corpus

EV_MIN = 1.5
EV_MAX = 3.0


def apply_ev(image: Tensor, ev: float) -> Tensor:
    """Exposure shift v' = clamp(v * 2^ev, 0, 255), rounded half-up."""
    shifted = image.astype(np.float64) * (2.0 ** ev)
    return np.clip(np.floor(shifted + 0.5), 0, 255).astype(np.uint8)


def _scene(rng: np.random.Generator, size: int) -> Tensor:
    """Seeded mixture of linear gradients, rectangles, and per-pixel noise."""
    lo, hi = 25.0, 230.0
    ramp = np.linspace(0.0, 1.0, size)
    ends = rng.uniform(lo, hi, size=(4, 3))
    horiz = ends[0] + ramp[None, :, None] * (ends[1] - ends[0])
    vert = ends[2] + ramp[:, None, None] * (ends[3] - ends[2])
    img = (horiz + vert) / 2.0
    for _ in range(int(rng.integers(2, 6))):
        y0, x0 = rng.integers(0, size - 1, size=2)
        y1 = int(rng.integers(y0 + 1, size + 1))
        x1 = int(rng.integers(x0 + 1, size + 1))
        img[y0:y1, x0:x1, :] = rng.uniform(lo, hi, size=3)
    img += rng.uniform(-12.0, 12.0, size=img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def synth_generate(out_dir: str, count_per_class: int, seed: int, size: int) -> int:
    """Write `count` pristine scenes and their exposure-shifted twins.

    File pairs are pri.%04d.ppm / exp.%04d.ppm; a manifest.tsv records
    name, class, and the EV applied (0 for pristine rows). Output is fully
    determined by the seed. Returns the number of image files written.
    """
    if size < 8:
        raise UsageError(f"size {size} < 8")
    if count_per_class < 1:
        raise UsageError(f"count {count_per_class} < 1")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    rows = []
    for i in range(count_per_class):
        scene = _scene(rng, size)
        sign = 1.0 if rng.integers(0, 2) == 1 else -1.0
        # quantize before applying so the manifest EV reproduces the file
        ev = round(float(sign * rng.uniform(EV_MIN, EV_MAX)), 6)
        distorted = apply_ev(scene, ev)
        pri_name = f"pri.{i:04d}.ppm"
        exp_name = f"exp.{i:04d}.ppm"
        with open(os.path.join(out_dir, pri_name), "wb") as fh:
            fh.write(encode_ppm(scene))
        with open(os.path.join(out_dir, exp_name), "wb") as fh:
            fh.write(encode_ppm(distorted))
        rows.append((pri_name, "pri", 0.0))
        rows.append((exp_name, "exp", ev))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="ascii") as fh:
        fh.write("name\tclass\tev\n")
        for name, cls, ev in rows:
            fh.write(f"{name}\t{cls}\t{ev:.6f}\n")
    return 2 * count_per_class
