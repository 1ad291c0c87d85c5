"""Pinhole cameras, canonical stereo rigs and Plücker ray embeddings.

Conventions:

* :class:`RigidPose` is camera-to-world: ``rotation`` maps camera axes to
  world axes and ``translation`` is the camera center in world coordinates.
* Camera axes are +x right, +y down, +z into the scene.
* Pixel ``(i, j)`` (row, column) has its center at ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotRectified, OutOfBounds, ParallelRays, StereoSpaceError

ROTATION_TOL = 1e-6  # radians, relative rotation of a rectified pair
OFFAXIS_TOL = 1e-9  # fraction of the baseline
ORTHO_TOL = 1e-9
PARALLEL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise StereoSpaceError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise StereoSpaceError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise StereoSpaceError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3) or t.shape != (3,):
            raise StereoSpaceError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL:
            raise StereoSpaceError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise StereoSpaceError("rotation has det != +1")
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @property
    def center(self):
        return self.translation

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"RigidPose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class StereoRig:
    """A rectified pair expressed in the canonical stereo frame."""

    baseline_m: float
    left_pose: RigidPose
    right_pose: RigidPose
    left_intrinsics: CameraIntrinsics | None = None
    right_intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        if not self.baseline_m > 0:
            raise StereoSpaceError(f"baseline must be positive, got {self.baseline_m}")

    @classmethod
    def canonical(cls, baseline_m, left_intrinsics=None, right_intrinsics=None):
        half = 0.5 * baseline_m
        return cls(
            baseline_m=float(baseline_m),
            left_pose=RigidPose(np.eye(3), [-half, 0.0, 0.0]),
            right_pose=RigidPose(np.eye(3), [half, 0.0, 0.0]),
            left_intrinsics=left_intrinsics,
            right_intrinsics=right_intrinsics,
        )


def _rotation_angle(rot):
    c = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    # arccos is ill-conditioned near 0; the skew part gives the small-angle value
    s = 0.5 * np.linalg.norm([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return float(np.arctan2(s, c))


def canonicalize_rig(left_pose, right_pose, baseline_m=None, *, left_intrinsics=None,
                     right_intrinsics=None):
    """Re-express a rectified pair with its rig center at the origin.

    The returned rig has identity rotations and camera centers at
    ``(-B/2, 0, 0)`` and ``(+B/2, 0, 0)``. ``baseline_m`` defaults to the
    measured center distance; when given it must agree with it.

    Raises
    ------
    NotRectified
        If the relative rotation exceeds ``ROTATION_TOL`` or the right center
        is not on the left camera's +x axis.
    """
    rel_rot = left_pose.rotation.T @ right_pose.rotation
    angle = _rotation_angle(rel_rot)
    if angle >= ROTATION_TOL:
        raise NotRectified(f"relative rotation {np.degrees(angle):.6g} deg is not identity")

    offset = left_pose.rotation.T @ (right_pose.center - left_pose.center)
    measured = float(np.linalg.norm(offset))
    if measured <= 0:
        raise NotRectified("camera centers coincide")
    if baseline_m is None:
        baseline_m = measured
    if not baseline_m > 0:
        raise StereoSpaceError(f"baseline must be positive, got {baseline_m}")
    if max(abs(offset[1]), abs(offset[2])) >= OFFAXIS_TOL * baseline_m or offset[0] <= 0:
        raise NotRectified(f"right camera offset {offset.tolist()} is not along +x")
    if abs(measured - baseline_m) >= OFFAXIS_TOL * baseline_m:
        raise NotRectified(f"center distance {measured!r} disagrees with baseline {baseline_m!r}")

    return StereoRig.canonical(baseline_m, left_intrinsics, right_intrinsics)


@dataclass(frozen=True, eq=False)
class PluckerRay:
    """Unit-direction, moment pair ``(d, m)`` with ``m = o x d``."""

    direction: np.ndarray
    moment: np.ndarray

    @classmethod
    def from_point_direction(cls, point, direction):
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        return cls(d, np.cross(np.asarray(point, dtype=np.float64), d))

    def as_vector(self):
        return np.concatenate([self.direction, self.moment])


def _check_pixel(intr, i, j):
    if not (0 <= i < intr.height and 0 <= j < intr.width):
        raise OutOfBounds(f"pixel ({i}, {j}) outside {intr.height}x{intr.width} image")


def _camera_directions(intr, rows, cols):
    u = (np.asarray(cols, dtype=np.float64) + 0.5 - intr.cx) / intr.fx
    v = (np.asarray(rows, dtype=np.float64) + 0.5 - intr.cy) / intr.fy
    d = np.stack(np.broadcast_arrays(u, v, np.ones_like(u + v)), axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_ray(intr, pose, pixel):
    i, j = pixel
    _check_pixel(intr, i, j)
    d_cam = _camera_directions(intr, i, j)
    d = pose.rotation @ d_cam
    d = d / np.linalg.norm(d)
    return PluckerRay(d, np.cross(pose.center, d))


def plucker_map(intr, pose):
    """Dense ``(6, H, W)`` ray embedding, channels ``(dx, dy, dz, mx, my, mz)``."""
    rows, cols = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    d = _camera_directions(intr, rows, cols) @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    m = np.cross(pose.center, d)
    return np.concatenate([d, m], axis=-1).transpose(2, 0, 1)


def reciprocal_product(a, b):
    return float(np.dot(a.direction, b.moment) + np.dot(b.direction, a.moment))


def line_distance(a, b):
    cross = np.linalg.norm(np.cross(a.direction, b.direction))
    if cross <= PARALLEL_TOL:
        raise ParallelRays("line distance is undefined for parallel rays")
    return abs(reciprocal_product(a, b)) / cross
