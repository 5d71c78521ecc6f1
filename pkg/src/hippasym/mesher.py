"""Closed triangle surface extraction from binary masks via marching cubes.

The iso-surface sits at the 0.5 level between occupied and empty voxel
centers; for binary data every mesh vertex is the midpoint of a grid edge
joining an inside center to an outside center. Output meshes are validated
genus-0 2-manifolds with outward (counter-clockwise from outside) faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .volgrid import VoxelMask

WELD_TOL_MM = 1e-9


class MeshError(ValueError):
    """Mask or mesh violates the meshing contract."""


@dataclass
class TriangleMesh:
    """Closed triangle surface in millimeter coordinates.

    ``vertices`` is (n, 3) float64; ``faces`` is (m, 3) int32 with
    counter-clockwise winding viewed from outside.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must be an (m, 3) array")

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=float), self.faces)


@dataclass
class MeshDiagnostics:
    manifold: bool
    euler: int
    oriented: bool
    outward: bool
    boundary_edges: int
    nonmanifold_edges: int
    duplicate_vertices: int
    zero_area_faces: int
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.manifold and self.euler == 2 and self.oriented
                and self.outward and self.duplicate_vertices == 0
                and self.zero_area_faces == 0)


def marching_cubes(mask: VoxelMask) -> TriangleMesh:
    """Triangulate the 0.5 iso-surface of a binary mask.

    The mask must be a single cavity-free 6-connected component (apply
    ``volgrid.largest_component`` first) and must not touch the grid
    boundary. Vertex coordinates are in mm with spacing and origin applied.
    """
    if mask.occupied_count == 0:
        raise MeshError("empty mask: no occupied voxel")
    if mask.touches_boundary():
        raise MeshError("mask touches the grid boundary: pad the volume")

    # one empty layer of padding so every crossing cell lies inside the grid
    field3 = np.pad(mask.data, 1)
    nx, ny, nz = field3.shape

    # cube case index per cell from the 8 corner occupancies
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        corner = field3[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz]
        case |= (corner.astype(np.int32) << bit)

    active = np.argwhere((case > 0) & (case < 255))
    if active.size == 0:
        raise MeshError("no iso-surface crossings found")

    # global edge key: grid edge from voxel-corner (i,j,k) along axis a.
    # EDGE_CORNERS maps a cell-local edge to its lower corner and axis.
    edge_lower = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]],
                            CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
    edge_axis = np.argmax(
        CORNER_OFFSETS[EDGE_CORNERS[:, 0]] != CORNER_OFFSETS[EDGE_CORNERS[:, 1]],
        axis=1,
    )

    spacing = np.asarray(mask.spacing_mm)
    origin = np.asarray(mask.origin_mm)

    vert_ids: dict[tuple[int, int, int, int], int] = {}
    vert_pos: list[np.ndarray] = []
    tris: list[tuple[int, int, int]] = []

    axis_half = np.zeros((3, 3))
    np.fill_diagonal(axis_half, 0.5 * spacing)

    for ci, cj, ck in active:
        cell_case = case[ci, cj, ck]
        tri_row = TRI_TABLE[cell_case]
        if tri_row[0] < 0:
            continue
        cell = np.array([ci, cj, ck])
        local_vert = {}
        for edge in np.unique(tri_row[tri_row >= 0]):
            lower = cell + edge_lower[edge]
            a = int(edge_axis[edge])
            key = (int(lower[0]), int(lower[1]), int(lower[2]), a)
            vid = vert_ids.get(key)
            if vid is None:
                # midpoint of the crossing edge: padded index - 1 -> mask
                # voxel index; +0.5 centers; +half spacing along the axis
                center = origin + (lower - 1 + 0.5) * spacing
                vert_ids[key] = vid = len(vert_pos)
                vert_pos.append(center + axis_half[a])
            local_vert[int(edge)] = vid
        for t in range(0, 16, 3):
            if tri_row[t] < 0:
                break
            a, b, c = (local_vert[int(tri_row[t + k])] for k in range(3))
            if a == b or b == c or a == c:
                continue
            # table winding is inward for inside-set bits; flip for outward
            tris.append((a, c, b))

    mesh = TriangleMesh(np.asarray(vert_pos), np.asarray(tris, dtype=np.int32))
    diag = validate_mesh(mesh)
    if not diag.ok:
        raise MeshError("marching cubes produced an invalid mesh: "
                        + "; ".join(diag.messages))
    return mesh


def _edge_counts(faces: np.ndarray):
    """Directed and undirected edge multiplicity maps."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(e, axis=1)
    und_keys, und_counts = np.unique(und, axis=0, return_counts=True)
    dir_keys, dir_counts = np.unique(e, axis=0, return_counts=True)
    return und_keys, und_counts, dir_keys, dir_counts


def validate_mesh(mesh: TriangleMesh) -> MeshDiagnostics:
    """Diagnostic checks: manifoldness, Euler characteristic, orientation,
    duplicate vertices, degenerate faces. Never raises."""
    msgs = []
    v, f = mesh.vertices, mesh.faces
    und_keys, und_counts, _dir_keys, dir_counts = _edge_counts(f)
    boundary = int((und_counts == 1).sum())
    nonmanifold = int((und_counts > 2).sum())
    manifold = boundary == 0 and nonmanifold == 0
    if boundary:
        msgs.append(f"{boundary} boundary edges")
    if nonmanifold:
        msgs.append(f"{nonmanifold} edges shared by >2 faces")

    euler = int(v.shape[0] - und_keys.shape[0] + f.shape[0])
    if euler != 2:
        msgs.append(f"Euler characteristic {euler}, expected 2")

    oriented = bool((dir_counts == 1).all())
    if not oriented:
        msgs.append("inconsistent face orientation (repeated directed edge)")

    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    zero_faces = int((areas <= 0.0).sum())
    if zero_faces:
        msgs.append(f"{zero_faces} zero-area faces")

    outward = True
    if manifold and oriented:
        vol = float(np.einsum("ij,ij->", v[f[:, 0]], cross)) / 6.0
        outward = vol > 0
        if not outward:
            msgs.append(f"inward orientation (signed volume {vol:.3g})")

    dup = 0
    if v.shape[0] > 1:
        from scipy.spatial import cKDTree

        pairs = cKDTree(v).query_pairs(WELD_TOL_MM)
        dup = len(pairs)
        if dup:
            msgs.append(f"{dup} duplicate vertex pairs within {WELD_TOL_MM} mm")

    return MeshDiagnostics(
        manifold=manifold,
        euler=euler,
        oriented=oriented,
        outward=outward,
        boundary_edges=boundary,
        nonmanifold_edges=nonmanifold,
        duplicate_vertices=dup,
        zero_area_faces=zero_faces,
        messages=msgs,
    )


def _face_cross(mesh: TriangleMesh) -> np.ndarray:
    v, f = mesh.vertices, mesh.faces
    return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_face_cross(mesh), axis=1)


def mesh_area(mesh: TriangleMesh) -> float:
    """Total surface area in mm^2."""
    return float(face_areas(mesh).sum())


def mesh_signed_volume(mesh: TriangleMesh) -> float:
    """Divergence-theorem volume in mm^3; positive for outward orientation.

    Raises MeshError on an open mesh, where the quantity is undefined.
    """
    _, und_counts, _, _ = _edge_counts(mesh.faces)
    if (und_counts != 2).any():
        raise MeshError("volume undefined for an open mesh")
    v, f = mesh.vertices, mesh.faces
    cross = _face_cross(mesh)
    return float(np.einsum("ij,ij->", v[f[:, 0]], cross)) / 6.0


def mesh_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted average of triangle centroids (mm)."""
    v, f = mesh.vertices, mesh.faces
    areas = face_areas(mesh)
    tri_centroids = (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0
    return np.asarray(tri_centroids.T @ areas / areas.sum())


def save_obj(mesh: TriangleMesh, path: str) -> None:
    """ASCII OBJ subset: ``v x y z`` lines then 1-based ``f i j k`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def load_obj(path: str) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p) - 1 for p in parts[1:4]])
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int32))
