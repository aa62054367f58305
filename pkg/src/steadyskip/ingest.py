"""Frame ingestion: PPM/PGM directories and Y4M streams, grayscale, pyramids.

Input formats are restricted to binary PPM/PGM (``P6``/``P5``, maxval 255)
and uncompressed Y4M so that decoding needs no codec dependencies and a
decode/encode round trip is bit-exact.  Transcode anything else with
external tools first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

BT601_LUMA = (0.299, 0.587, 0.114)
MIN_FRAME_SIDE = 16
MIN_PYRAMID_SIDE = 8

_TRAILING_NUMBER = re.compile(r"(\d+)(?!.*\d)")
_IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm"}


class FrameSourceError(ValueError):
    """Malformed, unsupported, or inconsistently numbered frame input."""


@dataclass
class Frame:
    """One RGB frame; ``data`` is (height, width, 3) uint8, row major."""

    index: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("frame data must have shape (height, width, 3)")
        if self.data.dtype != np.uint8:
            raise ValueError("frame data must be uint8")
        if self.width < MIN_FRAME_SIDE or self.height < MIN_FRAME_SIDE:
            raise ValueError(
                f"frames must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


@dataclass
class GrayFrame:
    """Single-channel frame with values in [0, 1]; ``data`` is (height, width)."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


@dataclass
class Pyramid:
    """Halving-resolution stack of gray images; level 0 is full resolution."""

    levels: list[GrayFrame]

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def width(self) -> int:
        return self.levels[0].width

    @property
    def height(self) -> int:
        return self.levels[0].height


# --- PNM reading / writing ---


def _read_pnm_tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-delimited ASCII integers, honoring # comments.

    Returns the values and the offset just past the single whitespace byte
    terminating the last token.
    """
    values: list[int] = []
    pos = 0
    length = len(blob)
    while len(values) < count:
        while pos < length and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < length and blob[pos : pos + 1] == b"#":
            while pos < length and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < length and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token:
            raise FrameSourceError("truncated PNM header")
        try:
            values.append(int(token))
        except ValueError as exc:
            raise FrameSourceError(f"bad PNM header token {token!r}") from exc
    return values, pos + 1


def read_image(path: Path | str) -> np.ndarray:
    """Decode a binary PPM/PGM file into a uint8 array.

    Returns (h, w, 3) for P6 and (h, w) for P5.  Only maxval 255 is accepted.
    """
    blob = Path(path).read_bytes()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FrameSourceError(f"unsupported format magic {magic!r} in {path}")
    (width, height, maxval), offset = _read_pnm_tokens(blob[2:], 3)
    offset += 2
    if maxval != 255:
        raise FrameSourceError(f"unsupported PNM maxval {maxval} in {path}")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    pixels = blob[offset : offset + expected]
    if len(pixels) != expected:
        raise FrameSourceError(f"truncated pixel data in {path}")
    data = np.frombuffer(pixels, dtype=np.uint8)
    if channels == 3:
        return data.reshape(height, width, 3).copy()
    return data.reshape(height, width).copy()


def write_ppm(path: Path | str, data: np.ndarray) -> None:
    """Encode a (h, w, 3) uint8 array as canonical binary PPM."""
    if data.ndim != 3 or data.shape[2] != 3 or data.dtype != np.uint8:
        raise ValueError("write_ppm expects (height, width, 3) uint8 data")
    height, width = data.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_pgm(path: Path | str, data: np.ndarray) -> None:
    """Encode a (h, w) uint8 array as canonical binary PGM."""
    if data.ndim != 2 or data.dtype != np.uint8:
        raise ValueError("write_pgm expects (height, width) uint8 data")
    height, width = data.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


# --- Y4M reading ---


def _yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing YUV 4:2:0 to RGB; chroma upsampled 2x nearest."""
    yf = y.astype(np.float64)
    uf = np.repeat(np.repeat(u.astype(np.float64), 2, axis=0), 2, axis=1)
    vf = np.repeat(np.repeat(v.astype(np.float64), 2, axis=0), 2, axis=1)
    uf = uf[: y.shape[0], : y.shape[1]] - 128.0
    vf = vf[: y.shape[0], : y.shape[1]] - 128.0
    yl = 1.164 * (yf - 16.0)
    r = yl + 1.596 * vf
    g = yl - 0.813 * vf - 0.391 * uf
    b = yl + 2.018 * uf
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _iter_y4m(path: Path) -> Iterator[np.ndarray]:
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0 or not blob.startswith(b"YUV4MPEG2"):
        raise FrameSourceError(f"not a Y4M stream: {path}")
    width = height = 0
    chroma = "420"
    for tag in blob[len(b"YUV4MPEG2") : newline].split():
        key, value = tag[:1], tag[1:].decode("ascii", "replace")
        if key == b"W":
            width = int(value)
        elif key == b"H":
            height = int(value)
        elif key == b"C":
            chroma = value
        # F (frame rate) is parsed implicitly and ignored; other tags skipped
    if width <= 0 or height <= 0:
        raise FrameSourceError(f"Y4M header missing W/H in {path}")
    if chroma.startswith("420"):
        frame_size = width * height + 2 * ((width // 2) * (height // 2))
        mono = False
    elif chroma == "mono":
        frame_size = width * height
        mono = True
    else:
        raise FrameSourceError(f"unsupported Y4M chroma {chroma!r} in {path}")

    pos = newline + 1
    while pos < len(blob):
        line_end = blob.find(b"\n", pos)
        if line_end < 0 or not blob[pos:line_end].startswith(b"FRAME"):
            raise FrameSourceError(f"corrupt Y4M frame header in {path}")
        pos = line_end + 1
        raw = blob[pos : pos + frame_size]
        if len(raw) != frame_size:
            raise FrameSourceError(f"truncated Y4M frame in {path}")
        pos += frame_size
        if mono:
            y = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
            yield np.repeat(y[:, :, None], 3, axis=2)
        else:
            luma = width * height
            cw, ch = width // 2, height // 2
            y = np.frombuffer(raw[:luma], dtype=np.uint8).reshape(height, width)
            u = np.frombuffer(raw[luma : luma + cw * ch], dtype=np.uint8).reshape(ch, cw)
            v = np.frombuffer(raw[luma + cw * ch :], dtype=np.uint8).reshape(ch, cw)
            yield _yuv420_to_rgb(y, u, v)


# --- Frame stream ---


def _numbered_image_files(directory: Path) -> list[Path]:
    files = []
    for entry in directory.iterdir():
        if entry.is_file() and entry.suffix.lower() in _IMAGE_SUFFIXES:
            files.append(entry)
    if not files:
        raise FrameSourceError(f"no PPM/PGM frames found in {directory}")
    numbered = []
    for entry in files:
        match = _TRAILING_NUMBER.search(entry.stem)
        if match is None:
            raise FrameSourceError(f"frame file without a number: {entry.name}")
        numbered.append((int(match.group(1)), entry))
    numbered.sort()
    numbers = [num for num, _ in numbered]
    if len(set(numbers)) != len(numbers):
        raise FrameSourceError(f"duplicate frame numbering in {directory}")
    first, last = numbers[0], numbers[-1]
    if numbers != list(range(first, last + 1)):
        raise FrameSourceError(f"non-contiguous frame numbering in {directory}")
    return [entry for _, entry in numbered]


def open_frame_source(
    path: Path | str, frame_range: tuple[int, int] | None = None
) -> Iterator[Frame]:
    """Yield RGB frames from a PPM/PGM directory or a single Y4M file.

    Frames are indexed 0..n-1 in ascending file-number order; PGM (and mono
    Y4M) inputs are replicated to 3 channels.  ``frame_range`` restricts the
    stream to the inclusive index interval [first, last].

    Raises:
        FrameSourceError: missing path, unsupported format, duplicate or
            non-contiguous file numbering, or a range outside the stream.
    """
    path = Path(path)
    if not path.exists():
        raise FrameSourceError(f"input path does not exist: {path}")

    if frame_range is not None:
        first, last = frame_range
        if first < 0 or last < first:
            raise FrameSourceError(f"invalid frame range [{first}, {last}]")

    if path.is_dir():
        files = _numbered_image_files(path)
        total = len(files)
        if frame_range is not None and frame_range[1] >= total:
            raise FrameSourceError(
                f"frame range {frame_range} outside stream of {total} frames"
            )
        for index, entry in enumerate(files):
            if frame_range is not None and not frame_range[0] <= index <= frame_range[1]:
                continue
            data = read_image(entry)
            if data.ndim == 2:
                data = np.repeat(data[:, :, None], 3, axis=2)
            yield Frame(index=index, data=data)
        return

    if path.suffix.lower() == ".y4m":
        index = -1
        for index, data in enumerate(_iter_y4m(path)):
            if frame_range is not None and not frame_range[0] <= index <= frame_range[1]:
                continue
            yield Frame(index=index, data=data)
        if frame_range is not None and frame_range[1] > index:
            raise FrameSourceError(
                f"frame range {frame_range} outside stream of {index + 1} frames"
            )
        return

    raise FrameSourceError(f"unsupported input {path}: expected directory or .y4m")


# --- Grayscale and pyramids ---


def to_grayscale(frame: Frame) -> GrayFrame:
    """BT.601 luma in [0, 1]: (0.299 R + 0.587 G + 0.114 B) / 255."""
    r, g, b = BT601_LUMA
    data = frame.data.astype(np.float64)
    luma = (r * data[:, :, 0] + g * data[:, :, 1] + b * data[:, :, 2]) / 255.0
    return GrayFrame(data=luma)


def _halve(data: np.ndarray) -> np.ndarray:
    # 2x2 box filter + 2x decimation; odd trailing row/column is dropped
    h2, w2 = data.shape[0] // 2, data.shape[1] // 2
    trimmed = data[: 2 * h2, : 2 * w2]
    return trimmed.reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def build_pyramid(gray: GrayFrame, max_levels: int) -> Pyramid:
    """Build a box-filtered halving pyramid.

    Construction stops early once the next level would fall below
    8x8 pixels; the input must be at least 16x16.
    """
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    if gray.width < MIN_FRAME_SIDE or gray.height < MIN_FRAME_SIDE:
        raise ValueError(
            f"pyramid input must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
        )
    levels = [gray]
    while len(levels) < max_levels:
        current = levels[-1].data
        if current.shape[0] // 2 < MIN_PYRAMID_SIDE or current.shape[1] // 2 < MIN_PYRAMID_SIDE:
            break
        levels.append(GrayFrame(data=_halve(current)))
    return Pyramid(levels=levels)
