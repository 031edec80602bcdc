"""Pinhole camera: pose, per-pixel primary rays and point projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidCamera
from ..geometry import vec3


@dataclass(frozen=True)
class CameraConfig:
    id: str
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vfov: float = math.radians(60.0)
    width: int = 128
    height: int = 128

    def __post_init__(self):
        f = np.subtract(self.look_at, self.position)
        if float(np.linalg.norm(f)) <= 1e-9:
            raise InvalidCamera(f"camera {self.id!r}: position equals look_at")
        if not 0.0 < self.vfov < math.pi:
            raise InvalidCamera(f"camera {self.id!r}: vfov must lie in (0, pi)")
        if self.width < 16 or self.height < 16:
            raise InvalidCamera(f"camera {self.id!r}: image must be at least 16x16")
        if float(np.linalg.norm(np.cross(f, self.up))) <= 1e-9 * float(np.linalg.norm(f)):
            raise InvalidCamera(f"camera {self.id!r}: up vector is parallel to the view direction")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unit (forward, right, up) vectors."""
        f = np.subtract(self.look_at, self.position).astype(float)
        f /= np.linalg.norm(f)
        r = np.cross(f, self.up)
        r /= np.linalg.norm(r)
        u = np.cross(r, f)
        return f, r, u

    @property
    def tan_half(self) -> tuple[float, float]:
        """Tangent of the horizontal and vertical half field of view."""
        tv = math.tan(self.vfov / 2)
        return tv * self.width / self.height, tv

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "vfov": self.vfov,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(
            id=str(d["id"]),
            position=vec3(d["position"]),
            look_at=vec3(d["look_at"]),
            up=vec3(d.get("up", (0.0, 0.0, 1.0))),
            vfov=float(d.get("vfov", math.radians(60.0))),
            width=int(d.get("width", 128)),
            height=int(d.get("height", 128)),
        )


def pixel_rays(cam: CameraConfig, xs: np.ndarray, ys: np.ndarray):
    """Unit ray directions through pixel centers (column ``xs``, row ``ys``; row 0 on top).

    Returns ``(origin, direction)`` as tuples of three component arrays.
    """
    f, r, u = cam.basis()
    th, tv = cam.tan_half
    sx = (2.0 * (xs + 0.5) / cam.width - 1.0) * th
    sy = (1.0 - 2.0 * (ys + 0.5) / cam.height) * tv
    dx = f[0] + sx * r[0] + sy * u[0]
    dy = f[1] + sx * r[1] + sy * u[1]
    dz = f[2] + sx * r[2] + sy * u[2]
    norm = np.sqrt(dx * dx + dy * dy + dz * dz)
    d = (dx / norm, dy / norm, dz / norm)
    o = tuple(np.full(xs.shape, c, dtype=float) for c in cam.position)
    return o, d


def project(cam: CameraConfig, points: np.ndarray):
    """Project world points (N, 3).

    Returns ``(sx, sy, depth)`` where ``sx, sy`` are tangent-plane
    coordinates (inside the frustum when ``|sx| <= tan_h`` and
    ``|sy| <= tan_v``) and ``depth`` is the distance along the forward axis.
    """
    f, r, u = cam.basis()
    rel = np.atleast_2d(points) - np.asarray(cam.position, dtype=float)
    depth = rel @ f
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (rel @ r) / depth
        sy = (rel @ u) / depth
    return sx, sy, depth


def in_frustum(cam: CameraConfig, points: np.ndarray, near: float = 1e-3) -> np.ndarray:
    sx, sy, depth = project(cam, points)
    th, tv = cam.tan_half
    with np.errstate(invalid="ignore"):
        return (depth > near) & (np.abs(sx) <= th) & (np.abs(sy) <= tv)


def to_pixel(cam: CameraConfig, points: np.ndarray):
    """Fractional pixel coordinates (column, row) of world points."""
    sx, sy, _ = project(cam, points)
    th, tv = cam.tan_half
    col = (sx / th + 1.0) * cam.width / 2.0 - 0.5
    row = (1.0 - sy / tv) * cam.height / 2.0 - 0.5
    return col, row
