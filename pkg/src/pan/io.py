"""File formats: JSONL point clouds and boxes, PANF feature maps, PGM heatmaps.

JSONL records are one compact JSON object per line with a fixed key order
and shortest-round-trip float formatting, so write -> read -> write is
byte-identical. Feature maps use a small binary container (magic "PANF",
little-endian u32 H, W, C, then H*W*C little-endian float32, row-major).
Heatmaps are 8-bit PGM (P5) images of per-cell channel sums normalized by
the per-sample maximum, higher values lighter.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .metrics import Box3D, FrameAnnotations
from .pillars import PointCloud, RadarPoint
from .tensor import DTYPE

PANF_MAGIC = b"PANF"


# ---------------------------------------------------------------------------
# points.jsonl
# ---------------------------------------------------------------------------

def _point_record(frame_id: str, p: RadarPoint) -> dict:
    return {
        "frame": frame_id,
        "x": float(p.x), "y": float(p.y), "z": float(p.z),
        "vx": float(p.vx), "vy": float(p.vy),
        "rcs": float(p.rcs),
        "sweep": int(p.sweep_index),
        "dt": float(p.sweep_offset),
    }


def write_points_jsonl(path, clouds) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cloud in clouds:
            for p in cloud.points:
                fh.write(json.dumps(_point_record(cloud.frame_id, p), allow_nan=False))
                fh.write("\n")


def read_points_jsonl(path) -> list[PointCloud]:
    """Group records into clouds, frames in first-appearance order."""
    clouds: dict[str, PointCloud] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            cloud = clouds.setdefault(rec["frame"], PointCloud(frame_id=rec["frame"]))
            cloud.points.append(RadarPoint(
                x=rec["x"], y=rec["y"], z=rec["z"],
                vx=rec["vx"], vy=rec["vy"], rcs=rec["rcs"],
                sweep_offset=rec["dt"], sweep_index=rec["sweep"],
            ))
    return list(clouds.values())


# ---------------------------------------------------------------------------
# boxes.jsonl
# ---------------------------------------------------------------------------

def _box_record(frame_id: str, role: str, condition: str, b: Box3D) -> dict:
    rec = {
        "frame": frame_id,
        "role": role,
        "class": b.class_name,
        "cx": float(b.x), "cy": float(b.y), "cz": float(b.z),
        "w": float(b.w), "l": float(b.l), "h": float(b.h),
        "yaw": float(b.yaw),
        "vx": float(b.vx), "vy": float(b.vy),
        "attr": b.attribute,
    }
    if role == "pred":
        rec["score"] = float(b.score if b.score is not None else 0.0)
    rec["condition"] = condition
    return rec


def write_boxes_jsonl(path, frames) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in frames:
            for b in frame.gt:
                fh.write(json.dumps(_box_record(frame.frame_id, "gt", frame.condition, b),
                                    allow_nan=False))
                fh.write("\n")
            for b in frame.pred:
                fh.write(json.dumps(_box_record(frame.frame_id, "pred", frame.condition, b),
                                    allow_nan=False))
                fh.write("\n")


def read_boxes_jsonl(path) -> list[FrameAnnotations]:
    frames: dict[str, FrameAnnotations] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            frame = frames.setdefault(
                rec["frame"],
                FrameAnnotations(frame_id=rec["frame"], condition=rec["condition"]),
            )
            frame.condition = rec["condition"]
            box = Box3D(
                x=rec["cx"], y=rec["cy"], z=rec["cz"],
                w=rec["w"], l=rec["l"], h=rec["h"],
                yaw=rec["yaw"], vx=rec["vx"], vy=rec["vy"],
                class_name=rec["class"], attribute=rec["attr"],
                score=rec.get("score"),
            )
            (frame.pred if rec["role"] == "pred" else frame.gt).append(box)
    return list(frames.values())


# ---------------------------------------------------------------------------
# PANF feature maps
# ---------------------------------------------------------------------------

def write_feature_map(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError("feature map must be [H, W, C]")
    h, w, c = data.shape
    with open(path, "wb") as fh:
        fh.write(PANF_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_feature_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PANF_MAGIC:
            raise ValueError(f"not a PANF file (magic {magic!r})")
        h, w, c = struct.unpack("<III", fh.read(12))
        buf = fh.read(h * w * c * 4)
    if len(buf) != h * w * c * 4:
        raise ValueError("truncated PANF payload")
    return np.frombuffer(buf, dtype="<f4").reshape(h, w, c).astype(DTYPE)


# ---------------------------------------------------------------------------
# PGM heatmaps
# ---------------------------------------------------------------------------

def channel_sum(data: np.ndarray) -> np.ndarray:
    """Per-cell sum over channels, the quantity visualized in heatmaps."""
    return np.asarray(data, dtype=DTYPE).sum(axis=2)


def write_heatmap_pgm(path, values: np.ndarray) -> None:
    """8-bit P5 image of ``values`` [H, W], normalized by the sample max.

    Negative cells render black; an all-nonpositive map renders black.
    """
    values = np.maximum(np.asarray(values, dtype=DTYPE), 0.0)
    peak = values.max() if values.size else 0.0
    if peak > 0:
        img = np.round(values / peak * 255.0)
    else:
        img = np.zeros_like(values)
    img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
