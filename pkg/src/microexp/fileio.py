"""On-disk formats: binary PGM frame directories, ASCII PLY point clouds,
landmark CSVs, feature-vector files, and the flat key=value config format.

All writers are deterministic (fixed ordering and float formatting) so a
rerun with the same inputs produces byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .lbptop import FeatureVector
from .preprocess2d import FrameVolume
from .preprocess3d import PointCloudFrame


# --- PGM ---------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-d uint8 image")
    h, w = img.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) image with maxval 255."""
    data = Path(path).read_bytes()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines; pixel data starts one byte after maxval.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM supported, got maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def write_volume(directory, volume: FrameVolume) -> None:
    """Write a volume as zero-padded frame_%04d.pgm files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(volume.n_frames):
        write_pgm(directory / f"frame_{t:04d}.pgm", volume.data[t])


def read_volume(directory) -> FrameVolume:
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.pgm files in {directory}")
    return FrameVolume(np.stack([read_pgm(p) for p in paths]))


# --- PLY ---------------------------------------------------------------

def _format_float(value: float) -> str:
    # 9 significant digits round-trip float32 exactly.
    return format(np.float32(value), ".9g")


def write_ply(path, cloud: PointCloudFrame) -> None:
    """Write a cloud as ASCII PLY with float32 x, y, z vertex properties."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for p in cloud.points:
        lines.append(f"{_format_float(p[0])} {_format_float(p[1])} {_format_float(p[2])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path) -> PointCloudFrame:
    """Read an ASCII PLY with x, y, z float vertex properties."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = None
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts and parts[0] == "format" and parts[1] != "ascii":
            raise ValueError(f"{path}: only ASCII PLY supported")
        elif parts == ["end_header"]:
            body_at = i + 1
            break
    if n_vertex is None or body_at is None:
        raise ValueError(f"{path}: missing vertex element or end_header")
    rows = lines[body_at : body_at + n_vertex]
    if len(rows) != n_vertex:
        raise ValueError(f"{path}: expected {n_vertex} vertex rows, found {len(rows)}")
    # parse through the declared float32 property type, then widen
    points = np.array([[float(v) for v in row.split()[:3]] for row in rows],
                      dtype=np.float32).astype(np.float64)
    return PointCloudFrame(points if points.size else np.empty((0, 3)))


def write_cloud_sequence(directory, clouds) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, cloud in enumerate(clouds):
        write_ply(directory / f"cloud_{t:04d}.ply", cloud)


def read_cloud_sequence(directory) -> list[PointCloudFrame]:
    directory = Path(directory)
    paths = sorted(directory.glob("cloud_*.ply"))
    if not paths:
        raise FileNotFoundError(f"no cloud_*.ply files in {directory}")
    return [read_ply(p) for p in paths]


# --- landmarks ----------------------------------------------------------

def write_landmarks(path, per_frame, dims: int) -> None:
    """Write per-frame landmark arrays as CSV rows frame,idx,x,y[,z]."""
    header = {2: "frame,idx,x,y", 3: "frame,idx,x,y,z"}[dims]
    lines = [header]
    for t, marks in enumerate(per_frame):
        marks = np.asarray(marks, dtype=np.float64)
        for j in range(marks.shape[0]):
            coords = ",".join(repr(float(c)) for c in marks[j, :dims])
            lines.append(f"{t},{j},{coords}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_landmarks(path, dims: int) -> list[np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    expected = {2: "frame,idx,x,y", 3: "frame,idx,x,y,z"}[dims]
    if not lines or lines[0].strip() != expected:
        raise ValueError(f"{path}: expected header {expected!r}")
    frames: dict[int, dict[int, list[float]]] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        t, j = int(parts[0]), int(parts[1])
        frames.setdefault(t, {})[j] = [float(v) for v in parts[2 : 2 + dims]]
    out = []
    for t in sorted(frames):
        marks = frames[t]
        arr = np.array([marks[j] for j in sorted(marks)])
        out.append(arr)
    return out


# --- feature vectors ------------------------------------------------------

def write_feature_csv(path, feature: FeatureVector) -> None:
    """One CSV row: tag,config_fingerprint,v0,v1,..."""
    values = ",".join(repr(float(v)) for v in feature.values)
    Path(path).write_text(f"{feature.tag},{feature.fingerprint},{values}\n", encoding="utf-8")


def read_feature_csv(path) -> FeatureVector:
    text = Path(path).read_text(encoding="utf-8").strip()
    parts = text.split(",")
    if len(parts) < 3:
        raise ValueError(f"{path}: not a feature CSV row")
    return FeatureVector(np.array([float(v) for v in parts[2:]]),
                         tag=parts[0], fingerprint=parts[1])


def write_feature_bin(path, feature: FeatureVector) -> None:
    """Little-endian float64 values behind an 8-byte length header."""
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<Q", len(feature)))
        fh.write(feature.values.astype("<f8").tobytes())


def read_feature_bin(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (count,) = struct.unpack("<Q", data[:8])
    values = np.frombuffer(data, dtype="<f8", count=count, offset=8)
    return values.astype(np.float64)


# --- flat config ----------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``dotted.key=value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_config(values: dict[str, str]) -> str:
    return "\n".join(f"{k}={values[k]}" for k in sorted(values)) + "\n"


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def save_config(path, values: dict[str, str]) -> None:
    Path(path).write_text(format_config(values), encoding="utf-8")
