"""Camera text files, PFM depth maps, and binary PLY point clouds.

Arrays are float64 in memory; PFM and PLY store float32, so a value
survives write -> read -> write byte-identically. Camera text files
store full-precision decimal floats (repr round trip), comfortably
inside the documented nine-significant-digit guarantee.

Camera file layout, in order: a line "extrinsic", four rows of the 4x4
world-to-camera matrix [R|t; 0 0 0 1], a blank line, "intrinsic", three
rows of K, a blank line, then "d_min d_interval". The depth interval
maps to CameraModel.depth_range through the hypothesis count of the
coarsest stage: d_max = d_min + d_interval * (count - 1).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import CameraModel
from .fusion import PointCloud

__all__ = [
    "read_cam",
    "write_cam",
    "read_pfm",
    "write_pfm",
    "read_ply",
    "write_ply",
]

_PLY_PROPS = ("property float x", "property float y", "property float z")


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in row)


def write_cam(cam: CameraModel, path: str | Path, hypothesis_count: int = 48) -> None:
    """Write a camera as text; see the module docstring for the layout."""
    if hypothesis_count < 2:
        raise ValueError(f"hypothesis_count must be >= 2, got {hypothesis_count}")
    extrinsic = np.eye(4)
    extrinsic[:3, :3] = cam.R
    extrinsic[:3, 3] = cam.t
    d_min, d_max = cam.depth_range
    interval = (d_max - d_min) / (hypothesis_count - 1)
    lines = ["extrinsic"]
    lines += [_fmt_row(extrinsic[i]) for i in range(4)]
    lines.append("")
    lines.append("intrinsic")
    lines += [_fmt_row(cam.K[i]) for i in range(3)]
    lines.append("")
    lines.append(f"{repr(float(d_min))} {repr(float(interval))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


class _LineReader:
    """Sequential line access that reports 1-based positions in errors."""

    def __init__(self, path: str | Path) -> None:
        self.path = str(path)
        self.lines = Path(path).read_text(encoding="ascii").splitlines()
        self.pos = 0

    def fail(self, message: str) -> ValueError:
        return ValueError(f"{self.path}:{self.pos}: {message}")

    def next_content(self, expect: str) -> str:
        """Next non-blank line; `expect` names what a truncated file is missing."""
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        self.pos = len(self.lines)
        raise self.fail(f"file ends before {expect}")

    def floats(self, count: int, expect: str) -> list[float]:
        line = self.next_content(expect)
        parts = line.split()
        if len(parts) != count:
            raise self.fail(f"expected {count} numbers for {expect}, got {len(parts)}")
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise self.fail(f"non-numeric value in {expect}: {line!r}") from None


def read_cam(path: str | Path, hypothesis_count: int = 48) -> CameraModel:
    """Parse a camera text file; malformed input raises with file:line."""
    if hypothesis_count < 2:
        raise ValueError(f"hypothesis_count must be >= 2, got {hypothesis_count}")
    reader = _LineReader(path)
    header = reader.next_content("the 'extrinsic' section")
    if header != "extrinsic":
        raise reader.fail(f"expected 'extrinsic' section header, got {header!r}")
    extrinsic = np.array(
        [reader.floats(4, f"extrinsic row {i}") for i in range(4)]
    )
    if np.abs(extrinsic[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise reader.fail(f"last extrinsic row must be 0 0 0 1, got {extrinsic[3]}")
    header = reader.next_content("the 'intrinsic' section")
    if header != "intrinsic":
        raise reader.fail(f"expected 'intrinsic' section header, got {header!r}")
    intrinsic = np.array([reader.floats(3, f"intrinsic row {i}") for i in range(3)])
    d_min, interval = reader.floats(2, "the depth line 'd_min d_interval'")
    if d_min <= 0 or interval <= 0:
        raise reader.fail(f"d_min and d_interval must be positive, got {d_min} {interval}")
    d_max = d_min + interval * (hypothesis_count - 1)
    return CameraModel(
        K=intrinsic,
        R=extrinsic[:3, :3],
        t=extrinsic[:3, 3],
        depth_range=(d_min, d_max),
    )


def write_pfm(data: np.ndarray, path: str | Path) -> None:
    """Write a 2-d map as grayscale PFM (little-endian, bottom-to-top rows)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"PFM data must be 2-d, got shape {data.shape}")
    h, w = data.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.flipud(data.astype("<f4")).tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM into a float64 (H, W) array.

    The scale line's sign selects the byte order (negative: little
    endian); its magnitude is ignored, as is conventional.
    """
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise ValueError(f"{path}: truncated PFM header")
    magic, dims, scale_text, body = parts
    if magic.strip() != b"Pf":
        raise ValueError(f"{path}: bad PFM magic {magic!r}, expected b'Pf'")
    dim_parts = dims.split()
    if len(dim_parts) != 2:
        raise ValueError(f"{path}: PFM dimension line must be 'width height', got {dims!r}")
    try:
        w, h = (int(p) for p in dim_parts)
        scale = float(scale_text)
    except ValueError:
        raise ValueError(f"{path}: non-numeric PFM header fields") from None
    if w < 1 or h < 1:
        raise ValueError(f"{path}: PFM dimensions must be positive, got {w}x{h}")
    if scale == 0.0:
        raise ValueError(f"{path}: PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    expected = 4 * w * h
    if len(body) < expected:
        raise ValueError(f"{path}: PFM body has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body[:expected], dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float64)


def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """Write x, y, z float32 vertices as binary little-endian PLY."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {cloud.count}\n" + "\n".join(_PLY_PROPS) + "\nend_header\n"
    )
    Path(path).write_bytes(header.encode("ascii") + cloud.points.astype("<f4").tobytes())


def read_ply(path: str | Path) -> PointCloud:
    """Read a binary little-endian PLY with float x, y, z vertices."""
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: PLY header has no end_header line")
    header_lines = raw[:cut].decode("ascii").splitlines()
    body = raw[cut + len(marker):]
    if not header_lines or header_lines[0] != "ply":
        raise ValueError(f"{path}: missing 'ply' magic line")
    count = None
    props: list[str] = []
    for line in header_lines[1:]:
        if line.startswith("comment"):
            continue
        if line == "format binary_little_endian 1.0":
            continue
        if line.startswith("element vertex "):
            count = int(line.split()[-1])
            continue
        if line.startswith("property"):
            props.append(line)
            continue
        raise ValueError(f"{path}: unsupported PLY header line {line!r}")
    if count is None:
        raise ValueError(f"{path}: PLY header has no vertex element")
    if tuple(props) != _PLY_PROPS:
        raise ValueError(f"{path}: PLY must have exactly float x, y, z, got {props}")
    expected = 12 * count
    if len(body) < expected:
        raise ValueError(f"{path}: PLY body has {len(body)} bytes, expected {expected}")
    points = np.frombuffer(body[:expected], dtype="<f4").reshape(count, 3)
    return PointCloud(points=points.astype(np.float64))
