# -*- coding: utf-8 -*-
"""
Trajectory (TUM) and point cloud (ASCII PLY) file I/O.

TUM lines are `timestamp tx ty tz qx qy qz qw`; `#` starts a comment. An
optional ninth column carries the Sim3 scale (written only when some pose has
a non-unit scale). PLY files are ASCII with float x y z and an optional int
`label` property.
"""
from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from geometry.pointcloud import PointCloud, Trajectory
from geometry.sim3 import Sim3
from utils.errors import InvalidInputError

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


def read_tum(path: Path) -> Trajectory:
    path = Path(path)
    try:
        df = pd.read_csv(path, sep=r"\s+", comment="#", header=None, dtype=float)
    except pd.errors.EmptyDataError:
        return Trajectory(np.zeros(0), ())
    if df.shape[1] not in (8, 9):
        raise InvalidInputError(f"{path}: expected 8 or 9 columns in TUM file, got {df.shape[1]}")
    values = df.to_numpy()
    poses = []
    for row in values:
        scale = row[8] if values.shape[1] == 9 else 1.0
        qx, qy, qz, qw = row[4:8]
        poses.append(Sim3(np.array([qw, qx, qy, qz]), row[1:4], scale))
    return Trajectory(values[:, 0], tuple(poses))


def write_tum(path: Path, trajectory: Trajectory, header: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_scale = any(abs(p.scale - 1.0) > 0.0 for p in trajectory.poses)
    rows = []
    for ts, pose in zip(trajectory.timestamps, trajectory.poses):
        w, x, y, z = pose.rotation
        row = [ts, *pose.translation, x, y, z, w]
        if with_scale:
            row.append(pose.scale)
        rows.append(row)
    columns = "timestamp tx ty tz qx qy qz qw" + (" s" if with_scale else "")
    comment = f"{header}\n{columns}" if header else columns
    data = np.array(rows, dtype=float).reshape(-1, 9 if with_scale else 8)
    np.savetxt(path, data, fmt=FLOAT_FMT, header=comment, comments="# ")


def _read_ply_header(handle) -> Tuple[int, List[str], int]:
    first = handle.readline().strip()
    if first != "ply":
        raise InvalidInputError("not a PLY file (missing magic line)")
    n_vertices = None
    properties: List[str] = []
    in_vertex = False
    lines = 1
    for raw in handle:
        lines += 1
        parts = raw.strip().split()
        if not parts:
            continue
        key = parts[0].lower()
        if key == "format" and parts[1] != "ascii":
            raise InvalidInputError(f"only ASCII PLY is supported, got format '{parts[1]}'")
        if key == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertices = int(parts[2])
        elif key == "property" and in_vertex:
            properties.append(parts[-1])
        elif key == "end_header":
            break
    if n_vertices is None:
        raise InvalidInputError("PLY header has no vertex element")
    return n_vertices, properties, lines


def read_ply(path: Path) -> PointCloud:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        n_vertices, properties, _ = _read_ply_header(handle)
        body = handle.read()
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise InvalidInputError(f"{path}: PLY vertex element lacks '{axis}'")
    if n_vertices == 0:
        return PointCloud.empty(labelled="label" in properties)
    df = pd.read_csv(io.StringIO(body), sep=r"\s+", header=None, names=properties, nrows=n_vertices)
    if len(df) != n_vertices:
        raise InvalidInputError(f"{path}: header announces {n_vertices} vertices, found {len(df)}")
    points = df[["x", "y", "z"]].to_numpy(dtype=float)
    labels = df["label"].to_numpy(dtype=np.int64) if "label" in properties else None
    return PointCloud(points, labels)


def write_ply(path: Path, cloud: PointCloud) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if cloud.has_labels:
        header.append("property int label")
    header.append("end_header")
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(header) + "\n")
        if len(cloud) == 0:
            return
        if cloud.has_labels:
            data = np.column_stack([cloud.points, cloud.labels.astype(float)])
            np.savetxt(handle, data, fmt=[FLOAT_FMT] * 3 + ["%d"])
        else:
            np.savetxt(handle, cloud.points, fmt=FLOAT_FMT)
    logger.debug(f"Wrote {len(cloud)} points to {path}")
