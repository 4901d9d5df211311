"""File formats: JSON-lines trajectories, TUM interchange, binary PGM
frames, token files, dataset manifests, and CSV/PLY exports.

The native trajectory format is JSON lines: a header object with a format
version and fps, then one pose object per line with fields q (w,x,y,z),
t (x,y,z), fx, fy, cx, cy, W, H.  TUM files ("timestamp tx ty tz qx qy qz
qw") import with default intrinsics fx = fy = W, principal point at the
image center, W = H = 512.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CameraPose, Intrinsics, Trajectory, UnitQuaternion
from .preprocess import GrayFrame

TRAJECTORY_FORMAT = "camtraj/trajectory-v1"
MANIFEST_FORMAT = "camtraj/manifest-v1"

TUM_DEFAULT_SIZE = 512


def save_trajectory(traj: Trajectory, path) -> None:
    lines = [json.dumps({"format": TRAJECTORY_FORMAT, "fps": traj.fps})]
    for p in traj.poses:
        q = p.rotation
        i = p.intrinsics
        lines.append(json.dumps({
            "q": [q.w, q.x, q.y, q.z],
            "t": list(p.translation),
            "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
            "W": i.width, "H": i.height,
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> Trajectory:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty trajectory file", offset=0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad header: {exc}", offset=0) from None
    if not isinstance(header, dict) or header.get("format") != TRAJECTORY_FORMAT:
        raise ParseError(
            f"{path}: missing or unsupported format version "
            f"(expected {TRAJECTORY_FORMAT!r})", offset=0)
    fps = float(header.get("fps", 1.0))

    poses = []
    for lineno, line in enumerate(lines[1:], start=1):
        try:
            rec = json.loads(line)
            q = UnitQuaternion.from_array(rec["q"])
            intr = Intrinsics(rec["fx"], rec["fy"], rec["cx"], rec["cy"],
                              int(rec["W"]), int(rec["H"]))
            poses.append(CameraPose(q, tuple(rec["t"]), intr))
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            raise ParseError(f"{path}: bad pose record: {exc}", offset=lineno) from None
    if not poses:
        raise ParseError(f"{path}: no pose records", offset=1)
    return Trajectory(tuple(poses), fps)


def load_tum(path, image_size: int = TUM_DEFAULT_SIZE) -> Trajectory:
    """Import a TUM interchange file (timestamp tx ty tz qx qy qz qw).

    Quaternions off unit norm by more than 1e-3 are renormalized with a
    warning.  Intrinsics default to fx = fy = W, cx = cy = W/2, W = H =
    ``image_size``.  fps is derived from the median timestamp step when
    timestamps increase, else 1.
    """
    intr = Intrinsics(float(image_size), float(image_size),
                      image_size / 2.0, image_size / 2.0, image_size, image_size)
    poses = []
    stamps = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"{path}: expected 8 fields, got {len(parts)}",
                             offset=lineno)
        try:
            ts, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts)
        except ValueError:
            raise ParseError(f"{path}: non-numeric field", offset=lineno) from None
        norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if abs(norm - 1.0) > 1e-3:
            warnings.warn(
                f"{path} line {lineno}: quaternion norm {norm:.6f}, renormalizing")
        if norm < 1e-12 or not math.isfinite(norm):
            raise ParseError(f"{path}: degenerate quaternion", offset=lineno)
        poses.append(CameraPose(UnitQuaternion(qw, qx, qy, qz), (tx, ty, tz), intr))
        stamps.append(ts)
    if not poses:
        raise ParseError(f"{path}: no pose lines", offset=0)

    fps = 1.0
    if len(stamps) >= 2:
        dts = np.diff(stamps)
        med = float(np.median(dts))
        if med > 0:
            fps = 1.0 / med
    return Trajectory(tuple(poses), fps)


def save_tum(traj: Trajectory, path) -> None:
    lines = []
    for i, p in enumerate(traj.poses):
        q = p.rotation
        t = p.translation
        ts = i / traj.fps
        lines.append(f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                     f"{q.x:.9f} {q.y:.9f} {q.z:.9f} {q.w:.9f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_any_trajectory(path) -> Trajectory:
    """Load the native JSON-lines format or fall back to TUM."""
    first = ""
    with open(path) as fh:
        for line in fh:
            if line.strip():
                first = line.strip()
                break
    if first.startswith("{"):
        return load_trajectory(path)
    return load_tum(path)


# PGM (P5) frames -------------------------------------------------------------

def load_pgm(path) -> GrayFrame:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file", offset=0)
    # header = magic, width, height, maxval; '#' comments allowed between fields
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise ParseError(f"{path}: malformed PGM header", offset=0) from None
    if maxval > 255:
        raise ParseError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ParseError(f"{path}: truncated pixel data")
    return GrayFrame(pixels.reshape(height, width))


def save_pgm(frame: GrayFrame, path) -> None:
    h, w = frame.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + frame.pixels.tobytes())


# Token files ------------------------------------------------------------------

def save_tokens(sequences, path) -> None:
    """One trajectory per line: space-separated ids, PAD stripped."""
    Path(path).write_text("".join(ts.to_line() + "\n" for ts in sequences))


def load_tokens(path, bins: int):
    from .tokenizer import TokenSequence

    sequences = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            sequences.append(TokenSequence.from_line(line, bins))
        except ParseError as exc:
            raise ParseError(f"{path} line {lineno}: {exc}", offset=lineno) from None
    if not sequences:
        raise ParseError(f"{path}: no token lines", offset=0)
    return sequences


# Exports ----------------------------------------------------------------------

def export_csv(traj: Trajectory, path) -> None:
    """frame,x,y,z,qw,qx,qy,qz rows, one per pose."""
    lines = ["frame,x,y,z,qw,qx,qy,qz"]
    for i, p in enumerate(traj.poses):
        t, q = p.translation, p.rotation
        lines.append(f"{i},{t[0]!r},{t[1]!r},{t[2]!r},"
                     f"{q.w!r},{q.x!r},{q.y!r},{q.z!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_csv_positions(path) -> np.ndarray:
    """Positions back from an export_csv file (exact round-trip)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "frame,x,y,z,qw,qx,qy,qz":
        raise ParseError(f"{path}: not a trajectory CSV export", offset=0)
    rows = []
    for lineno, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != 8:
            raise ParseError(f"{path}: expected 8 columns", offset=lineno)
        rows.append([float(parts[1]), float(parts[2]), float(parts[3])])
    return np.array(rows)


def export_ply_polyline(traj: Trajectory, path) -> None:
    """ASCII PLY polyline: one vertex per pose (x, y, z, frame index) and
    one edge between each consecutive pair."""
    n = len(traj)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property int frame",
        f"element edge {n - 1}",
        "property int vertex1",
        "property int vertex2",
        "end_header",
    ]
    body = [f"{p.translation[0]!r} {p.translation[1]!r} {p.translation[2]!r} {i}"
            for i, p in enumerate(traj.poses)]
    body += [f"{i} {i + 1}" for i in range(n - 1)]
    Path(path).write_text("\n".join(header + body) + "\n")
