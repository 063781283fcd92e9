"""Paired RGB/thermal frame handling.

Loads 8-bit RGB (PNG/PPM) and 8/16-bit single-channel thermal rasters
(PNG/PGM), normalizes thermal intensities to [0, 1], resamples frames with
bilinear interpolation, and slices aligned frames into labeled square
patches. All types are immutable value objects; every operation is pure.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionMismatch,
    EmptyImage,
    MultiChannelInput,
    NonDivisibleSize,
    UnreadableFile,
    UnsupportedFormat,
    ZeroDimension,
    ZeroTarget,
)
from .util import atomic_write_bytes, atomic_write_text


class PatchLabel(IntEnum):
    NO_FLAME = 0
    FLAME = 1


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB frame; ``data`` has shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise UnsupportedFormat(f"expected (h, w, 3) array, got {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ZeroDimension("image has a zero dimension")
        object.__setattr__(self, "data", arr)
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ThermalImage:
    """Single-channel frame with intensities normalized to [0, 1].

    ``source_bit_depth`` records whether the raster was 8- or 16-bit so the
    image can be written back at native precision.
    """

    data: np.ndarray
    source_bit_depth: int = 16

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise MultiChannelInput(f"expected (h, w) array, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ZeroDimension("image has a zero dimension")
        if self.source_bit_depth not in (8, 16):
            raise UnsupportedFormat(f"bit depth must be 8 or 16, got {self.source_bit_depth}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise UnsupportedFormat("thermal intensities must lie in [0, 1]")
        object.__setattr__(self, "data", arr)
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel {0, 1} mask aligned with its source frame."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ZeroDimension("mask has a zero dimension")
        arr = (arr != 0).astype(np.uint8)
        object.__setattr__(self, "bits", arr)
        self.bits.setflags(write=False)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    rows: int
    cols: int
    frame_id: str = ""


@dataclass(frozen=True)
class Patch:
    """One aligned (thermal, mask) tile plus its optional training label."""

    grid_index: tuple[int, int]
    thermal: np.ndarray
    mask: np.ndarray
    label: PatchLabel | None = field(default=None)

    def __post_init__(self):
        t = np.asarray(self.thermal, dtype=np.float64)
        m = (np.asarray(self.mask) != 0).astype(np.uint8)
        if t.shape != m.shape:
            raise DimensionMismatch(f"thermal {t.shape} vs mask {m.shape}")
        object.__setattr__(self, "thermal", t)
        object.__setattr__(self, "mask", m)
        self.thermal.setflags(write=False)
        self.mask.setflags(write=False)


# --- loading -----------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pnm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace/comment-delimited integer tokens; return
    values and the offset of the byte following the single whitespace that
    terminates the last token."""
    values = []
    pos = 0
    for _ in range(count):
        m = _PNM_TOKEN.match(buf[pos:])
        if m is None:
            raise UnreadableFile("truncated PNM header")
        try:
            values.append(int(m.group(1)))
        except ValueError as exc:
            raise UnreadableFile(f"bad PNM header token {m.group(1)!r}") from exc
        pos += m.end(1)
    return values, pos + 1  # skip the single whitespace after maxval


def _load_pnm(path: Path) -> tuple[np.ndarray, int, int]:
    """Decode binary PPM (P6) or PGM (P5); returns (array, channels, maxval)."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(str(exc)) from exc
    if raw[:2] == b"P6":
        channels = 3
    elif raw[:2] == b"P5":
        channels = 1
    else:
        raise UnsupportedFormat(f"{path}: not a binary PPM/PGM file")
    (width, height, maxval), offset = _read_pnm_tokens(raw[2:], 3)
    offset += 2
    if width == 0 or height == 0:
        raise ZeroDimension(f"{path}: zero dimension {width}x{height}")
    if maxval <= 0 or maxval > 65535:
        raise UnsupportedFormat(f"{path}: maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    if len(raw) - offset < need:
        raise UnreadableFile(f"{path}: raster data truncated")
    arr = np.frombuffer(raw[offset:offset + need], dtype=dtype)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return arr.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8), channels, maxval


def load_rgb(path: str | Path) -> RgbImage:
    """Load an 8-bit 3-channel raster (PNG or binary PPM).

    Channels are returned in source order R, G, B.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"{path}: no such file")
    with path.open("rb") as fh:
        head = fh.read(2)
    if head in (b"P6", b"P5"):
        arr, channels, maxval = _load_pnm(path)
        if channels != 3:
            raise UnsupportedFormat(f"{path}: PGM is single-channel, expected RGB")
        if maxval > 255:
            raise UnsupportedFormat(f"{path}: 16-bit PPM not supported for RGB input")
        return RgbImage(arr)
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise UnsupportedFormat(f"{path}: mode {img.mode}, expected 8-bit RGB")
            return RgbImage(np.asarray(img, dtype=np.uint8))
    except UnsupportedFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc


def load_thermal(path: str | Path) -> ThermalImage:
    """Load an 8- or 16-bit single-channel raster (PNG or binary PGM).

    Values are rescaled linearly from [0, 2**depth - 1] to [0, 1] and the
    source bit depth is recorded.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"{path}: no such file")
    with path.open("rb") as fh:
        head = fh.read(2)
    if head in (b"P5", b"P6"):
        arr, channels, maxval = _load_pnm(path)
        if channels != 1:
            raise MultiChannelInput(f"{path}: PPM is 3-channel, expected grayscale")
        depth = 16 if maxval > 255 else 8
    else:
        try:
            with Image.open(path) as img:
                if img.mode == "L":
                    depth = 8
                elif img.mode in ("I;16", "I;16B", "I"):
                    depth = 16
                elif img.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
                    raise MultiChannelInput(f"{path}: mode {img.mode}, expected grayscale")
                else:
                    raise UnsupportedFormat(f"{path}: unsupported mode {img.mode}")
                arr = np.asarray(img)
        except (MultiChannelInput, UnsupportedFormat):
            raise
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise UnreadableFile(f"{path}: {exc}") from exc
    scale = float(2 ** depth - 1)
    data = np.clip(arr.astype(np.float64) / scale, 0.0, 1.0)
    return ThermalImage(data, source_bit_depth=depth)


# --- saving ------------------------------------------------------------------

def save_rgb(img: RgbImage, path: str | Path) -> None:
    """Write as PNG, or binary PPM when the suffix is .ppm. Atomic."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        atomic_write_bytes(path, header + img.data.tobytes())
        return
    buf = io.BytesIO()
    Image.fromarray(img.data, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_thermal(img: ThermalImage, path: str | Path) -> None:
    """Write at source bit depth as PNG, or binary PGM when suffix is .pgm.

    Quantization error of a save/load round trip is at most half of one
    source-depth step.
    """
    path = Path(path)
    scale = 2 ** img.source_bit_depth - 1
    quant = np.rint(img.data * scale)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{img.width} {img.height}\n{scale}\n".encode("ascii")
        payload = quant.astype(">u2" if scale > 255 else "u1").tobytes()
        atomic_write_bytes(path, header + payload)
        return
    buf = io.BytesIO()
    if img.source_bit_depth == 16:
        Image.fromarray(quant.astype("<u2"), mode="I;16").save(buf, format="PNG")
    else:
        Image.fromarray(quant.astype(np.uint8), mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as an 8-bit raster with set pixels at 255."""
    save_thermal(ThermalImage(mask.bits.astype(np.float64), source_bit_depth=8), path)


def load_mask(path: str | Path) -> BinaryMask:
    """Load a mask raster; any nonzero pixel counts as set."""
    return BinaryMask(load_thermal(path).data > 0.0)


# --- geometry ----------------------------------------------------------------

def _bilinear(plane: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Sample a 2-D float plane at target resolution (half-pixel centers).

    Mapping output pixel i to source coordinate (i + 0.5) * scale - 0.5 makes
    the operation an exact identity when the target equals the source size.
    """
    h, w = plane.shape
    xs = np.clip((np.arange(target_w) + 0.5) * (w / target_w) - 0.5, 0.0, w - 1.0)
    ys = np.clip((np.arange(target_h) + 0.5) * (h / target_h) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = (ys - y0)[:, None]
    top = plane[np.ix_(y0, x0)] * (1.0 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1.0 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


def resample(image: RgbImage | ThermalImage, target_w: int, target_h: int):
    """Bilinear resample to (target_w, target_h); preserves the value range
    and is the identity when the target matches the source dimensions."""
    if target_w <= 0 or target_h <= 0:
        raise ZeroTarget(f"target {target_w}x{target_h} must be positive")
    if isinstance(image, RgbImage):
        planes = [
            _bilinear(image.data[:, :, c].astype(np.float64), target_w, target_h)
            for c in range(3)
        ]
        out = np.clip(np.rint(np.stack(planes, axis=2)), 0, 255).astype(np.uint8)
        return RgbImage(out)
    if isinstance(image, ThermalImage):
        out = np.clip(_bilinear(image.data, target_w, target_h), 0.0, 1.0)
        return ThermalImage(out, source_bit_depth=image.source_bit_depth)
    raise TypeError(f"cannot resample {type(image).__name__}")


def patchify(
    thermal: ThermalImage,
    mask: BinaryMask,
    patch_size: int,
    frame_id: str = "",
) -> tuple[list[Patch], PatchGrid]:
    """Slice an aligned (thermal, mask) pair into a row-major patch list.

    A patch is labeled FLAME iff its mask region contains at least one set
    pixel, NO_FLAME otherwise.
    """
    if patch_size <= 0:
        raise NonDivisibleSize(f"patch size {patch_size} must be positive")
    if (thermal.height, thermal.width) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"thermal {thermal.height}x{thermal.width} vs mask {mask.height}x{mask.width}"
        )
    if thermal.height % patch_size or thermal.width % patch_size:
        raise NonDivisibleSize(
            f"dims {thermal.height}x{thermal.width} not divisible by {patch_size}"
        )
    rows = thermal.height // patch_size
    cols = thermal.width // patch_size
    patches = []
    for r in range(rows):
        for c in range(cols):
            ys = slice(r * patch_size, (r + 1) * patch_size)
            xs = slice(c * patch_size, (c + 1) * patch_size)
            region_mask = mask.bits[ys, xs]
            label = PatchLabel.FLAME if region_mask.any() else PatchLabel.NO_FLAME
            patches.append(
                Patch(
                    grid_index=(r, c),
                    thermal=thermal.data[ys, xs].copy(),
                    mask=region_mask.copy(),
                    label=label,
                )
            )
    return patches, PatchGrid(patch_size=patch_size, rows=rows, cols=cols, frame_id=frame_id)


def channel_means(img: RgbImage) -> tuple[float, float, float]:
    """Arithmetic mean of each RGB channel over all pixels."""
    if img.data.size == 0:
        raise EmptyImage("cannot average an empty image")
    means = img.data.reshape(-1, 3).mean(axis=0, dtype=np.float64)
    return float(means[0]), float(means[1]), float(means[2])


# --- patch export --------------------------------------------------------------

def export_patches(patches: list[Patch], grid: PatchGrid, out_dir: str | Path) -> Path:
    """Write one 16-bit PGM per patch plus a CSV index.

    The index columns are frame_id,row,col,label; rows follow the patch list
    order. Returns the index path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_id", "row", "col", "label"])
    for p in patches:
        r, c = p.grid_index
        name = f"{grid.frame_id or 'frame'}_r{r:03d}_c{c:03d}.pgm"
        save_thermal(ThermalImage(p.thermal, source_bit_depth=16), out_dir / name)
        writer.writerow([grid.frame_id, r, c, p.label.name.lower() if p.label is not None else ""])
    index_path = out_dir / "index.csv"
    atomic_write_text(index_path, buf.getvalue())
    return index_path
