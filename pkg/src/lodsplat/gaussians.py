"""Gaussian primitive model: raw/activated parameterization, covariance, SH color.

Splats are stored struct-of-arrays in :class:`GaussianCloud`. All optimizable
values are kept in their unconstrained ("raw") domain: log scales, logit
opacity, unnormalized quaternion. Activation happens on read so that gradient
steps can never produce an invalid primitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Real spherical harmonics normalization, degree <= 2, splatting convention.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

SH_COEFFS = 27  # 9 basis functions x 3 channels, channel-major
SPLAT_FLOATS = 38  # position 3 + rotation 4 + log_scale 3 + opacity 1 + sh 27


class InvalidParameterError(ValueError):
    """Raised when a geometric primitive receives non-finite or degenerate input."""


class ContractViolationError(ValueError):
    """Raised when caller-supplied state contradicts a documented precondition."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianCloud:
    """A batch of Gaussian splats (raw parameter domain).

    ``lod_levels`` is assigned at initialization and is immutable by
    convention: densification copies the parent's level, and no operation in
    this package rewrites it.
    """

    positions: np.ndarray  # (N, 3) meters, world frame
    rotations_raw: np.ndarray  # (N, 4) unnormalized quaternion (w, x, y, z)
    log_scales: np.ndarray  # (N, 3) log of per-axis stddev, meters
    opacities_raw: np.ndarray  # (N,) logit domain
    sh_coeffs: np.ndarray  # (N, 27) channel-major: 9 per channel, l=0,1,2, m=-l..l
    lod_levels: np.ndarray = field(default=None)  # (N,) int32

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.rotations_raw = np.atleast_2d(np.asarray(self.rotations_raw, dtype=np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64))
        self.opacities_raw = np.atleast_1d(np.asarray(self.opacities_raw, dtype=np.float64))
        self.sh_coeffs = np.atleast_2d(np.asarray(self.sh_coeffs, dtype=np.float64))
        n = len(self.positions)
        if self.lod_levels is None:
            self.lod_levels = np.zeros(n, dtype=np.int32)
        else:
            self.lod_levels = np.atleast_1d(np.asarray(self.lod_levels, dtype=np.int32))
        if self.positions.shape != (n, 3):
            raise InvalidParameterError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.rotations_raw.shape != (n, 4):
            raise InvalidParameterError("rotations_raw must be (N, 4)")
        if self.log_scales.shape != (n, 3):
            raise InvalidParameterError("log_scales must be (N, 3)")
        if self.opacities_raw.shape != (n,):
            raise InvalidParameterError("opacities_raw must be (N,)")
        if self.sh_coeffs.shape != (n, SH_COEFFS):
            raise InvalidParameterError(f"sh_coeffs must be (N, {SH_COEFFS})")
        if self.lod_levels.shape != (n,):
            raise InvalidParameterError("lod_levels must be (N,)")
        if np.all(np.isfinite(self.rotations_raw), axis=None) and n:
            norms = np.linalg.norm(self.rotations_raw, axis=1)
            if np.any(norms == 0.0):
                raise InvalidParameterError("all-zero rotation_raw is not a valid orientation")

    def __len__(self) -> int:
        return len(self.positions)

    # activated views -------------------------------------------------------

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacities_raw)

    @property
    def rotations(self) -> np.ndarray:
        norms = np.linalg.norm(self.rotations_raw, axis=1, keepdims=True)
        return self.rotations_raw / norms

    def take(self, index) -> "GaussianCloud":
        return GaussianCloud(
            self.positions[index],
            self.rotations_raw[index],
            self.log_scales[index],
            self.opacities_raw[index],
            self.sh_coeffs[index],
            self.lod_levels[index],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(),
            self.rotations_raw.copy(),
            self.log_scales.copy(),
            self.opacities_raw.copy(),
            self.sh_coeffs.copy(),
            self.lod_levels.copy(),
        )

    @staticmethod
    def concatenate(clouds) -> "GaussianCloud":
        clouds = list(clouds)
        if not clouds:
            return GaussianCloud.empty()
        return GaussianCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.rotations_raw for c in clouds]),
            np.concatenate([c.log_scales for c in clouds]),
            np.concatenate([c.opacities_raw for c in clouds]),
            np.concatenate([c.sh_coeffs for c in clouds]),
            np.concatenate([c.lod_levels for c in clouds]),
        )

    @staticmethod
    def empty() -> "GaussianCloud":
        return GaussianCloud(
            np.zeros((0, 3)),
            np.ones((0, 4)),
            np.zeros((0, 3)),
            np.zeros((0,)),
            np.zeros((0, SH_COEFFS)),
            np.zeros((0,), dtype=np.int32),
        )

    def to_records(self) -> np.ndarray:
        """Flatten to (N, 38) float32 in the canonical attribute order."""
        rec = np.concatenate(
            [
                self.positions,
                self.rotations_raw,
                self.log_scales,
                self.opacities_raw[:, None],
                self.sh_coeffs,
            ],
            axis=1,
        )
        return rec.astype(np.float32)

    @staticmethod
    def from_records(rec: np.ndarray, lod_level: int = 0) -> "GaussianCloud":
        rec = np.asarray(rec)
        if rec.ndim != 2 or rec.shape[1] != SPLAT_FLOATS:
            raise InvalidParameterError(f"records must be (N, {SPLAT_FLOATS})")
        return GaussianCloud(
            rec[:, 0:3],
            rec[:, 3:7],
            rec[:, 7:10],
            rec[:, 10],
            rec[:, 11:38],
            np.full(len(rec), lod_level, dtype=np.int32),
        )


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of unit quaternion(s) (w, x, y, z); shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def build_covariance(rotation: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """3x3 world covariance R diag(scale)^2 R^T from a unit quaternion and per-axis stddev.

    Broadcasts over leading dimensions; raises on non-finite input.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scale))):
        raise InvalidParameterError("non-finite rotation or scale")
    r = quat_to_rotmat(rotation)
    rs = r * (scale[..., None, :] ** 2)
    return rs @ np.swapaxes(r, -1, -2)


def sh_basis(view_dir: np.ndarray) -> np.ndarray:
    """The 9 degree-<=2 real SH basis values at unit direction(s); (..., 3) -> (..., 9)."""
    d = np.asarray(view_dir, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    b = np.empty(d.shape[:-1] + (9,))
    b[..., 0] = SH_C0
    b[..., 1] = -SH_C1 * y
    b[..., 2] = SH_C1 * z
    b[..., 3] = -SH_C1 * x
    b[..., 4] = SH_C2[0] * x * y
    b[..., 5] = SH_C2[1] * y * z
    b[..., 6] = SH_C2[2] * (2.0 * z * z - x * x - y * y)
    b[..., 7] = SH_C2[3] * x * z
    b[..., 8] = SH_C2[4] * (x * x - y * y)
    return b


def sh_basis_grad(view_dir: np.ndarray) -> np.ndarray:
    """d basis / d direction, unconstrained; (..., 3) -> (..., 9, 3)."""
    d = np.asarray(view_dir, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    g = np.zeros(d.shape[:-1] + (9, 3))
    g[..., 1, 1] = -SH_C1
    g[..., 2, 2] = SH_C1
    g[..., 3, 0] = -SH_C1
    g[..., 4, 0] = SH_C2[0] * y
    g[..., 4, 1] = SH_C2[0] * x
    g[..., 5, 1] = SH_C2[1] * z
    g[..., 5, 2] = SH_C2[1] * y
    g[..., 6, 0] = SH_C2[2] * (-2.0 * x)
    g[..., 6, 1] = SH_C2[2] * (-2.0 * y)
    g[..., 6, 2] = SH_C2[2] * (4.0 * z)
    g[..., 7, 0] = SH_C2[3] * z
    g[..., 7, 2] = SH_C2[3] * x
    g[..., 8, 0] = SH_C2[4] * (2.0 * x)
    g[..., 8, 1] = SH_C2[4] * (-2.0 * y)
    return g


def eval_sh(sh_coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """View-dependent RGB from 27 channel-major SH coefficients.

    Returns 0.5 + sum_k Y_k(dir) * c_k per channel, unclamped; the renderer
    clamps to [0, inf) at composite time.
    """
    sh = np.asarray(sh_coeffs, dtype=np.float64)
    coeffs = sh.reshape(sh.shape[:-1] + (3, 9))
    basis = sh_basis(view_dir)
    return 0.5 + np.einsum("...ck,...k->...c", coeffs, basis)
