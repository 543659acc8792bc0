# -*- coding: utf-8 -*-
"""
Sim(3) Lie group.

Similarity transforms are stored as (unit quaternion, translation, scale) and
act on points as x -> s * R @ x + t. Tangent vectors are 7-vectors ordered
(rho, phi, sigma): translational part, rotation vector, log-scale.

Perturbations throughout the code base are applied on the right:
T <- T * exp(xi).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from utils.errors import BranchAmbiguityError, InvalidInputError

TANGENT_DIM = 7
TAYLOR_EPS = 1e-6
PI_BRANCH_TOL = 1e-6


def hat3(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class Tangent7:
    """Element of sim(3) split into its named parts."""
    rho: np.ndarray
    phi: np.ndarray
    sigma: float

    @classmethod
    def from_vector(cls, v: Iterable[float]) -> "Tangent7":
        arr = np.asarray(v, dtype=float).reshape(TANGENT_DIM)
        return cls(rho=arr[:3].copy(), phi=arr[3:6].copy(), sigma=float(arr[6]))

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.rho, float), np.asarray(self.phi, float), [float(self.sigma)]])


TangentLike = Union[Tangent7, np.ndarray, Iterable[float]]


def _as_tangent_vector(xi: TangentLike) -> np.ndarray:
    if isinstance(xi, Tangent7):
        return xi.vector()
    v = np.asarray(xi, dtype=float)
    if v.shape != (TANGENT_DIM,):
        raise InvalidInputError(f"tangent vector must have shape (7,), got {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class Sim3:
    """Immutable similarity transform. `rotation` is a unit quaternion (w, x, y, z)."""
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    _rot: Rotation = field(init=False, repr=False, compare=False)
    _R: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm == 0.0:
            raise InvalidInputError("quaternion must be finite and non-zero")
        q = q / norm
        t = np.array(self.translation, dtype=float).reshape(3)
        s = float(self.scale)
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("translation must be finite")
        if not (np.isfinite(s) and s > 0.0):
            raise InvalidInputError(f"scale must be positive, got {s}")
        rot = Rotation.from_quat([q[1], q[2], q[3], q[0]])
        R = rot.as_matrix()
        q.setflags(write=False)
        t.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "_rot", rot)
        object.__setattr__(self, "_R", R)

    # --- constructors ---
    @classmethod
    def identity(cls) -> "Sim3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), 1.0)

    @classmethod
    def from_rotation(cls, rot: Rotation, translation=None, scale: float = 1.0) -> "Sim3":
        x, y, z, w = rot.as_quat()
        t = np.zeros(3) if translation is None else translation
        return cls(np.array([w, x, y, z]), t, scale)

    @classmethod
    def from_rotvec(cls, rotvec, translation=None, scale: float = 1.0) -> "Sim3":
        return cls.from_rotation(Rotation.from_rotvec(np.asarray(rotvec, float)), translation, scale)

    @classmethod
    def from_rotation_matrix(cls, R: np.ndarray, translation=None, scale: float = 1.0) -> "Sim3":
        return cls.from_rotation(Rotation.from_matrix(np.asarray(R, float)), translation, scale)

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Sim3":
        M = np.asarray(M, dtype=float)
        sR = M[:3, :3]
        det = np.linalg.det(sR)
        if det <= 0.0:
            raise InvalidInputError("matrix does not encode a proper similarity")
        s = float(np.cbrt(det))
        return cls.from_rotation_matrix(sR / s, M[:3, 3], s)

    @classmethod
    def from_translation(cls, translation) -> "Sim3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), translation, 1.0)

    @classmethod
    def from_scale(cls, scale: float) -> "Sim3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), scale)

    # --- accessors ---
    def rotation_matrix(self) -> np.ndarray:
        return self._R

    def as_rotation(self) -> Rotation:
        return self._rot

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self._R
        M[:3, 3] = self.translation
        return M

    # --- group operations ---
    def compose(self, other: "Sim3") -> "Sim3":
        rot = self._rot * other._rot
        t = self.scale * (self._R @ other.translation) + self.translation
        return Sim3.from_rotation(rot, t, self.scale * other.scale)

    def __matmul__(self, other: "Sim3") -> "Sim3":
        return self.compose(other)

    def inverse(self) -> "Sim3":
        inv_s = 1.0 / self.scale
        t = -inv_s * (self._R.T @ self.translation)
        return Sim3.from_rotation(self._rot.inv(), t, inv_s)

    def act(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single 3-vector or an (N, 3) array."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.scale * (self._R @ p) + self.translation
        return self.scale * (p @ self._R.T) + self.translation

    def adjoint(self) -> np.ndarray:
        """7x7 adjoint: T exp(xi) T^-1 = exp(Ad_T xi)."""
        Ad = np.zeros((TANGENT_DIM, TANGENT_DIM))
        Ad[:3, :3] = self.scale * self._R
        Ad[:3, 3:6] = hat3(self.translation) @ self._R
        Ad[:3, 6] = -self.translation
        Ad[3:6, 3:6] = self._R
        Ad[6, 6] = 1.0
        return Ad

    # --- comparisons ---
    def allclose(self, other: "Sim3", atol: float = 1e-9) -> bool:
        return (
            np.allclose(self._R, other._R, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
            and abs(self.scale - other.scale) <= atol
        )

    def distance(self, other: "Sim3") -> float:
        """Tangent norm of self^-1 * other."""
        return float(np.linalg.norm(sim3_log(self.inverse().compose(other))))

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(self._rot.as_rotvec()))

    # --- serialisation helpers ---
    def to_dict(self) -> dict:
        return {
            "q": [float(v) for v in self.rotation],
            "t": [float(v) for v in self.translation],
            "s": float(self.scale),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Sim3":
        return cls(np.asarray(data["q"], float), np.asarray(data["t"], float), float(data["s"]))

    def __repr__(self) -> str:
        return (f"Sim3(q={np.array2string(self.rotation, precision=6)}, "
                f"t={np.array2string(self.translation, precision=6)}, s={self.scale:.6g})")


def sim3_compose(a: Sim3, b: Sim3) -> Sim3:
    return a.compose(b)


def _sim3_w(phi: np.ndarray, sigma: float) -> np.ndarray:
    """Matrix W with t = W rho, i.e. the integral of exp(u (sigma I + hat(phi))) over u in [0, 1]."""
    theta = float(np.linalg.norm(phi))
    Omega = hat3(phi)
    Omega2 = Omega @ Omega
    if abs(sigma) < TAYLOR_EPS:
        C = 1.0 + sigma / 2.0 + sigma * sigma / 6.0
        if theta < TAYLOR_EPS:
            A = 0.5 + sigma / 3.0
            B = 1.0 / 6.0 + sigma / 8.0
        else:
            th2 = theta * theta
            sin_t, cos_t = np.sin(theta), np.cos(theta)
            A = (1.0 - cos_t) / th2 + sigma * (sin_t - theta * cos_t) / (th2 * theta)
            B = (theta - sin_t) / (th2 * theta) + sigma * (0.5 - (theta * sin_t + cos_t - 1.0) / th2) / th2
    else:
        s = np.exp(sigma)
        C = np.expm1(sigma) / sigma
        if theta < TAYLOR_EPS:
            sig2 = sigma * sigma
            A = ((sigma - 1.0) * s + 1.0) / sig2
            B = (s * 0.5 * sig2 + s - 1.0 - sigma * s) / (sig2 * sigma)
        else:
            th2 = theta * theta
            a = s * np.sin(theta)
            b = s * np.cos(theta)
            c = th2 + sigma * sigma
            A = (a * sigma + (1.0 - b) * theta) / (theta * c)
            B = (C - ((b - 1.0) * sigma + a * theta) / c) / th2
    return A * Omega + B * Omega2 + C * np.eye(3)


def sim3_exp(xi: TangentLike) -> Sim3:
    v = _as_tangent_vector(xi)
    rho, phi, sigma = v[:3], v[3:6], float(v[6])
    W = _sim3_w(phi, sigma)
    return Sim3.from_rotation(Rotation.from_rotvec(phi), W @ rho, float(np.exp(sigma)))


def sim3_log(T: Sim3) -> np.ndarray:
    """Principal logarithm as a (rho, phi, sigma) vector.

    Raises BranchAmbiguityError when the rotation angle is within PI_BRANCH_TOL of pi.
    """
    phi = T.as_rotation().as_rotvec()
    theta = float(np.linalg.norm(phi))
    if np.pi - theta < PI_BRANCH_TOL:
        raise BranchAmbiguityError(f"rotation angle {theta:.9f} too close to pi for a unique logarithm")
    sigma = float(np.log(T.scale))
    W = _sim3_w(phi, sigma)
    rho = np.linalg.solve(W, T.translation)
    return np.concatenate([rho, phi, [sigma]])


def sim3_hat(xi: TangentLike) -> np.ndarray:
    v = _as_tangent_vector(xi)
    M = np.zeros((4, 4))
    M[:3, :3] = hat3(v[3:6]) + v[6] * np.eye(3)
    M[:3, 3] = v[:3]
    return M


def sim3_ad(xi: TangentLike) -> np.ndarray:
    """7x7 matrix of the Lie bracket: ad(a) b = [a, b]."""
    v = _as_tangent_vector(xi)
    rho, phi, sigma = v[:3], v[3:6], v[6]
    ad = np.zeros((TANGENT_DIM, TANGENT_DIM))
    ad[:3, :3] = hat3(phi) + sigma * np.eye(3)
    ad[:3, 3:6] = hat3(rho)
    ad[:3, 6] = -rho
    ad[3:6, 3:6] = hat3(phi)
    return ad


def right_jacobian(xi: TangentLike) -> np.ndarray:
    """Exact right Jacobian, the integral of exp(-u ad(xi)) over u in [0, 1]."""
    ad = sim3_ad(xi)
    block = np.zeros((2 * TANGENT_DIM, 2 * TANGENT_DIM))
    block[:TANGENT_DIM, :TANGENT_DIM] = -ad
    block[:TANGENT_DIM, TANGENT_DIM:] = np.eye(TANGENT_DIM)
    return expm(block)[:TANGENT_DIM, TANGENT_DIM:]


def right_jacobian_inverse(xi: TangentLike) -> np.ndarray:
    return np.linalg.inv(right_jacobian(xi))


def random_sim3(rng: np.random.Generator, rot_scale: float = 1.0, trans_scale: float = 1.0,
                log_scale_sigma: float = 0.2) -> Sim3:
    """Random transform for tests and simulations."""
    rotvec = rng.normal(size=3)
    rotvec *= rot_scale * rng.uniform(0.0, 1.0) / max(np.linalg.norm(rotvec), 1e-12)
    return Sim3.from_rotvec(rotvec, rng.normal(scale=trans_scale, size=3),
                            float(np.exp(rng.normal(scale=log_scale_sigma))))
