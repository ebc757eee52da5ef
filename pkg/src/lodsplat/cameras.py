"""Pinhole camera model and the whitespace-separated camera list format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussians import InvalidParameterError


@dataclass
class PinholeCamera:
    """Calibrated pinhole camera with a rigid world-to-camera transform.

    Camera looks along +Z; pixel (row i, col j) has center (j + 0.5, i + 0.5);
    u = fx * X/Z + cx, v = fy * Y/Z + cy.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world->camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cam_id: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise InvalidParameterError(f"rotation not orthonormal (deviation {err:.2e})")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-space points -> pixel coordinates (u, v); caller culls Z <= 0."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        return np.stack(
            [self.fx * p[..., 0] / z + self.cx, self.fy * p[..., 1] / z + self.cy], axis=-1
        )


def look_at_camera(
    eye, target, up=(0.0, 0.0, 1.0), fx=100.0, fy=None, width=64, height=64, cx=None, cy=None,
    cam_id="",
) -> PinholeCamera:
    """Camera positioned at ``eye`` with +Z axis toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])  # rows: camera x, y, z axes in world
    if fy is None:
        fy = fx
    return PinholeCamera(
        fx=fx,
        fy=fy,
        cx=width / 2 if cx is None else cx,
        cy=height / 2 if cy is None else cy,
        width=width,
        height=height,
        rotation=rot,
        translation=-rot @ eye,
        cam_id=cam_id,
    )


def load_cameras(path) -> list[PinholeCamera]:
    """Parse the camera list: one camera per record, whitespace-separated.

    Record: id fx fy cx cy width height r00..r22 (row-major) t0 t1 t2.
    '#' starts a comment that runs to end of line.
    """
    tokens: list[str] = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) % 19 != 0:
        raise InvalidParameterError(
            f"camera file {path}: token count {len(tokens)} is not a multiple of 19"
        )
    cameras = []
    for i in range(0, len(tokens), 19):
        rec = tokens[i : i + 19]
        vals = [float(v) for v in rec[1:]]
        cameras.append(
            PinholeCamera(
                fx=vals[0],
                fy=vals[1],
                cx=vals[2],
                cy=vals[3],
                width=int(vals[4]),
                height=int(vals[5]),
                rotation=np.array(vals[6:15]).reshape(3, 3),
                translation=np.array(vals[15:18]),
                cam_id=rec[0],
            )
        )
    return cameras


def save_cameras(path, cameras) -> None:
    lines = ["# id fx fy cx cy width height r00..r22 t0 t1 t2"]
    for cam in cameras:
        parts = [cam.cam_id or "cam", repr(float(cam.fx)), repr(float(cam.fy)),
                 repr(float(cam.cx)), repr(float(cam.cy)), str(cam.width), str(cam.height)]
        parts += [repr(float(v)) for v in cam.rotation.reshape(-1)]
        parts += [repr(float(v)) for v in cam.translation]
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")
