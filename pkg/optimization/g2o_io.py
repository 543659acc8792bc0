# -*- coding: utf-8 -*-
"""
g2o-style text dump of a Sim(3) factor graph.

    VERTEX_SIM3:QUAT id tx ty tz qx qy qz qw s
    EDGE_SIM3:QUAT i j tx ty tz qx qy qz qw s <28 upper-triangular information values>
    FIX id
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from geometry.sim3 import TANGENT_DIM, Sim3
from optimization.pgo import Factor
from utils.errors import InvalidInputError

logger = logging.getLogger(__name__)

VERTEX_TAG = "VERTEX_SIM3:QUAT"
EDGE_TAG = "EDGE_SIM3:QUAT"
FIX_TAG = "FIX"
_UPPER = np.triu_indices(TANGENT_DIM)


def _pose_fields(pose: Sim3) -> List[str]:
    w, x, y, z = pose.rotation
    return [repr(float(v)) for v in (*pose.translation, x, y, z, w, pose.scale)]


def _parse_pose(values: Sequence[str], where: str) -> Sim3:
    try:
        tx, ty, tz, qx, qy, qz, qw, s = (float(v) for v in values)
    except ValueError:
        raise InvalidInputError(f"{where}: expected 8 numeric pose fields") from None
    return Sim3(np.array([qw, qx, qy, qz]), [tx, ty, tz], s)


def write_g2o(path: Path, poses: Dict[int, Sim3], factors: Sequence[Factor], fixed: Sequence[int] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for rid in sorted(poses):
        lines.append(" ".join([VERTEX_TAG, str(rid), *_pose_fields(poses[rid])]))
    for f in factors:
        info = [repr(float(v)) for v in f.information[_UPPER]]
        lines.append(" ".join([EDGE_TAG, str(f.i), str(f.j), *_pose_fields(f.measurement), *info]))
    for rid in sorted(fixed):
        lines.append(f"{FIX_TAG} {rid}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote g2o graph with {len(poses)} vertices and {len(factors)} edges to {path}")
    return path


def read_g2o(path: Path) -> Tuple[Dict[int, Sim3], List[Factor], List[int]]:
    """
    Parse a graph written by write_g2o.

    Raises:
        InvalidInputError: Unknown record tags or malformed records, with the line number.
    """
    poses: Dict[int, Sim3] = {}
    factors: List[Factor] = []
    fixed: List[int] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        where = f"{path}:{lineno}"
        tag = parts[0]
        if tag == VERTEX_TAG:
            if len(parts) != 10:
                raise InvalidInputError(f"{where}: vertex record needs 10 fields, got {len(parts)}")
            poses[int(parts[1])] = _parse_pose(parts[2:10], where)
        elif tag == EDGE_TAG:
            n_info = len(_UPPER[0])
            if len(parts) != 11 + n_info:
                raise InvalidInputError(f"{where}: edge record needs {11 + n_info} fields, got {len(parts)}")
            info = np.zeros((TANGENT_DIM, TANGENT_DIM))
            info[_UPPER] = [float(v) for v in parts[11:]]
            info = info + np.triu(info, 1).T
            factors.append(Factor(int(parts[1]), int(parts[2]), _parse_pose(parts[3:11], where), info))
        elif tag == FIX_TAG:
            fixed.append(int(parts[1]))
        else:
            raise InvalidInputError(f"{where}: unknown record '{tag}'")
    return poses, factors, fixed
