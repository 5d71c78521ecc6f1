"""Binary voxel masks: MVOX file I/O, synthetic cohort generation, cleanup.

A mask is a 3D occupancy grid with physical spacing. The on-disk MVOX format
is a JSON header (``<name>.mvox.json``) next to a raw payload of one byte per
voxel (0 or 1), x index fastest, then y, then z.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

SIDES = ("left", "right", "unsided")

# 6-connectivity for foreground, full 26-connectivity for background cavity
# detection (the complementary pair that avoids topological paradoxes).
STRUCT_6 = ndimage.generate_binary_structure(3, 1)
STRUCT_26 = ndimage.generate_binary_structure(3, 3)


class MaskError(ValueError):
    """Invalid mask contents or malformed MVOX file."""


@dataclass
class VoxelMask:
    """Binary occupancy grid with physical spacing.

    ``data`` has shape ``dims`` = (nx, ny, nz) with axis 0 = x. ``origin_mm``
    is the world position of the corner of voxel (0, 0, 0); the center of
    voxel (i, j, k) is ``origin_mm + (i + 0.5, j + 0.5, k + 0.5) * spacing_mm``.
    """

    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    origin_mm: tuple[float, float, float]
    data: np.ndarray
    side: str = "unsided"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        self.origin_mm = tuple(float(o) for o in self.origin_mm)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise MaskError("dims must be positive")
        if any(s <= 0 for s in self.spacing_mm):
            raise MaskError("spacing components must be strictly positive")
        if self.side not in SIDES:
            raise MaskError(f"side must be one of {SIDES}, got {self.side!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.shape != self.dims:
            raise MaskError(
                f"data shape {self.data.shape} does not match dims {self.dims}"
            )
        bad = (self.data > 1).nonzero()
        if bad[0].size:
            i, j, k = (int(a[0]) for a in bad)
            offset = i + self.dims[0] * (j + self.dims[1] * k)
            raise MaskError(
                f"non-binary voxel value {int(self.data[i, j, k])} at offset {offset}"
            )

    @property
    def occupied_count(self) -> int:
        return int(self.data.sum())

    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz

    def voxel_centers_mm(self, indices: np.ndarray) -> np.ndarray:
        """World centers (mm) of the voxels at the given (n, 3) index rows."""
        return np.asarray(self.origin_mm) + (indices + 0.5) * np.asarray(self.spacing_mm)

    def occupied_centers_mm(self) -> np.ndarray:
        idx = np.argwhere(self.data > 0)
        return self.voxel_centers_mm(idx)

    def mirrored_x(self) -> "VoxelMask":
        """Reflection through the grid's central yz-plane (flips voxel x order)."""
        side = {"left": "right", "right": "left"}.get(self.side, self.side)
        return replace(self, data=self.data[::-1, :, :].copy(), side=side)

    def touches_boundary(self) -> bool:
        d = self.data
        return bool(
            d[0].any() or d[-1].any()
            or d[:, 0].any() or d[:, -1].any()
            or d[:, :, 0].any() or d[:, :, -1].any()
        )


def _payload_path(header_path: str, data_name: str) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(header_path)), data_name)


def load_mask(path: str) -> VoxelMask:
    """Load a mask from an MVOX header file. Rejects malformed input.

    Raises MaskError on a garbled header, payload length mismatch, non-{0,1}
    payload byte (reported with its offset), or an empty (all-zero) mask.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MaskError(f"cannot read MVOX header {path}: {exc}") from exc
    for key in ("dims", "spacing_mm", "origin_mm", "side", "data"):
        if key not in header:
            raise MaskError(f"MVOX header missing field {key!r}")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise MaskError("dims must be positive")
    n = dims[0] * dims[1] * dims[2]
    raw_path = _payload_path(path, header["data"])
    try:
        payload = np.fromfile(raw_path, dtype=np.uint8)
    except OSError as exc:
        raise MaskError(f"cannot read MVOX payload {raw_path}: {exc}") from exc
    if payload.size != n:
        raise MaskError(
            f"payload length mismatch: expected {n} bytes, got {payload.size}"
        )
    bad = np.nonzero(payload > 1)[0]
    if bad.size:
        raise MaskError(
            f"non-binary voxel value {int(payload[bad[0]])} at offset {int(bad[0])}"
        )
    data = payload.reshape(dims, order="F")
    mask = VoxelMask(
        dims=dims,
        spacing_mm=tuple(header["spacing_mm"]),
        origin_mm=tuple(header["origin_mm"]),
        data=data,
        side=str(header["side"]),
    )
    if mask.occupied_count == 0:
        raise MaskError("empty mask: no occupied voxel")
    return mask


def save_mask(mask: VoxelMask, path: str) -> None:
    """Write ``<path>`` (header JSON) plus the raw payload next to it.

    ``path`` should end in ``.mvox.json``; the payload file replaces that
    suffix with ``.raw``. load_mask inverts this byte-exactly.
    """
    if not path.endswith(".mvox.json"):
        raise MaskError("mask path must end in .mvox.json")
    stem = os.path.basename(path)[: -len(".mvox.json")]
    raw_name = stem + ".raw"
    header = {
        "dims": list(mask.dims),
        "spacing_mm": list(mask.spacing_mm),
        "origin_mm": list(mask.origin_mm),
        "side": mask.side,
        "data": raw_name,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1)
        fh.write("\n")
    mask.data.ravel(order="F").tofile(_payload_path(path, raw_name))


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

def _euler_matrix(angles) -> np.ndarray:
    """Intrinsic z-y-x rotation from three Euler angles (radians)."""
    az, ay, ax = (float(a) for a in angles)
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


@dataclass
class RadialBump:
    """Smooth Gaussian bump added to the surface radius along one direction."""

    amplitude_mm: float = 0.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    width_rad: float = 0.5


@dataclass
class SyntheticSubjectSpec:
    """Recipe for one synthetic left/right mask pair.

    The two sides share a base ellipsoid; ``volume_scale`` and ``bump`` deform
    the side named by ``deformed_side`` only. Surface noise is a sum of three
    fixed long-wavelength sinusoids with phases drawn per side from ``seed``,
    so masks stay smooth and the output is deterministic.
    """

    base_semi_axes_mm: tuple[float, float, float] = (12.0, 8.0, 6.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    volume_scale: float = 1.0
    bump: RadialBump = field(default_factory=RadialBump)
    deformed_side: str = "left"
    noise_amplitude_mm: float = 0.0
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    margin_voxels: int = 2
    seed: int = 0

    def __post_init__(self):
        if any(a <= 0 for a in self.base_semi_axes_mm):
            raise ValueError("semi-axes must be positive")
        if self.volume_scale <= 0:
            raise ValueError("volume_scale must be positive")
        if self.deformed_side not in ("left", "right"):
            raise ValueError("deformed_side must be 'left' or 'right'")


# Fixed probe directions for the three noise sinusoids. Wavelengths are long
# (arguments span a few radians over the whole sphere) so surfaces stay smooth.
_NOISE_AXES = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.8660254037844386, 0.0, 0.5],
        [-0.40824829046386296, 0.816496580927726, 0.40824829046386296],
    ]
)
_NOISE_FREQS = np.array([2.0, 3.0, 2.0])


def _digitize(semi_axes, rotation_matrix, spacing, margin_voxels,
              noise_amplitude=0.0, noise_phases=None, bump: RadialBump | None = None,
              side="unsided") -> VoxelMask:
    """Rasterize an implicit blob: occupied iff the voxel center is inside.

    The blob surface along unit direction d (object frame) sits at radius
    r(d) = r_ellipsoid(d) + noise(d) + bump(d).
    """
    semi_axes = np.asarray(semi_axes, dtype=float)
    spacing = np.asarray(spacing, dtype=float)
    rot = np.asarray(rotation_matrix, dtype=float)

    pad = (abs(noise_amplitude) + (abs(bump.amplitude_mm) if bump else 0.0))
    # world-frame half extents of the rotated ellipsoid, inflated by the
    # radial perturbation bound
    half = np.sqrt((rot ** 2) @ (semi_axes ** 2)) + pad
    dims = tuple(int(np.ceil(2.0 * h / s)) + 2 * margin_voxels for h, s in zip(half, spacing))
    # center the shape on the grid
    origin = tuple(-(d * s) / 2.0 for d, s in zip(dims, spacing))

    xs = (np.arange(dims[0]) + 0.5) * spacing[0] + origin[0]
    ys = (np.arange(dims[1]) + 0.5) * spacing[1] + origin[1]
    zs = (np.arange(dims[2]) + 0.5) * spacing[2] + origin[2]
    px, py, pz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([px, py, pz], axis=-1)

    # object frame: q = R^T p
    q = pts @ rot
    rad = np.linalg.norm(q, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = q / rad[..., None]
    d = np.nan_to_num(d)

    # ellipsoid surface radius along d: 1 / |diag(1/a) d|
    scaled = d / semi_axes
    denom = np.linalg.norm(scaled, axis=-1)
    r_surf = np.divide(1.0, denom, out=np.full_like(denom, np.inf), where=denom > 0)

    if noise_amplitude and noise_phases is not None:
        proj = d @ _NOISE_AXES.T
        waves = np.sin(_NOISE_FREQS * proj + np.asarray(noise_phases))
        r_surf = r_surf + noise_amplitude * waves.mean(axis=-1)
    if bump is not None and bump.amplitude_mm:
        bdir = np.asarray(bump.direction, dtype=float)
        bdir = bdir / np.linalg.norm(bdir)
        ang = np.arccos(np.clip(d @ bdir, -1.0, 1.0))
        r_surf = r_surf + bump.amplitude_mm * np.exp(-0.5 * (ang / bump.width_rad) ** 2)

    occupied = rad <= r_surf
    return VoxelMask(dims=dims, spacing_mm=tuple(spacing), origin_mm=origin,
                     data=occupied.astype(np.uint8), side=side)


def gen_ellipsoid(semi_axes_mm, rotation=(0.0, 0.0, 0.0),
                  spacing_mm=(1.0, 1.0, 1.0), margin_voxels=2) -> VoxelMask:
    """Digitized solid ellipsoid: voxel occupied iff its center is inside."""
    semi_axes = np.asarray(semi_axes_mm, dtype=float)
    if (semi_axes <= 0).any():
        raise ValueError("semi-axes must be positive")
    if any(s <= 0 for s in spacing_mm):
        raise ValueError("spacing must be positive")
    return _digitize(semi_axes, _euler_matrix(rotation), spacing_mm, margin_voxels)


def gen_subject_pair(spec: SyntheticSubjectSpec) -> tuple[VoxelMask, VoxelMask]:
    """Generate (left, right) masks for one synthetic subject.

    With no deformation and zero noise the left mask is exactly the mirrored
    right mask (same array flipped along x). Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    phases_right = rng.uniform(0.0, 2.0 * np.pi, size=3)
    phases_left = rng.uniform(0.0, 2.0 * np.pi, size=3)
    rot = _euler_matrix(spec.rotation)

    def build(side_name, phases, deformed):
        scale = spec.volume_scale ** (1.0 / 3.0) if deformed else 1.0
        bump = spec.bump if deformed else None
        return _digitize(
            np.asarray(spec.base_semi_axes_mm) * scale,
            rot,
            spec.spacing_mm,
            spec.margin_voxels,
            noise_amplitude=spec.noise_amplitude_mm,
            noise_phases=phases,
            bump=bump,
            side=side_name,
        )

    right = build("right", phases_right, spec.deformed_side == "right")
    if spec.noise_amplitude_mm == 0.0 and spec.volume_scale == 1.0 \
            and spec.bump.amplitude_mm == 0.0:
        # exact mirror pair: reuse the digitized array
        left = replace(right, data=right.data[::-1, :, :].copy(), side="left")
    else:
        left = build("left", phases_left, spec.deformed_side == "left")
        left = replace(left, data=left.data[::-1, :, :].copy())
    return left, right


def largest_component(mask: VoxelMask) -> VoxelMask:
    """Keep the largest 6-connected occupied component and fill its cavities.

    Cavities are 26-connected background components that do not touch the grid
    boundary. Idempotent on already-clean masks.
    """
    if mask.occupied_count == 0:
        raise MaskError("empty mask: no occupied voxel")
    labels, n = ndimage.label(mask.data, structure=STRUCT_6)
    if n > 1:
        counts = np.bincount(labels.ravel())
        counts[0] = 0
        keep = int(counts.argmax())
        data = (labels == keep).astype(np.uint8)
    else:
        data = mask.data.copy()

    bg_labels, n_bg = ndimage.label(data == 0, structure=STRUCT_26)
    if n_bg > 1:
        border = np.unique(
            np.concatenate(
                [
                    bg_labels[0].ravel(), bg_labels[-1].ravel(),
                    bg_labels[:, 0].ravel(), bg_labels[:, -1].ravel(),
                    bg_labels[:, :, 0].ravel(), bg_labels[:, :, -1].ravel(),
                ]
            )
        )
        cavity = (bg_labels > 0) & ~np.isin(bg_labels, border)
        data[cavity] = 1
    return replace(mask, data=data)
