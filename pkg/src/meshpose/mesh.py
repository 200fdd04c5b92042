"""Triangle meshes with fixed shared topology: storage, OBJ I/O, queries.

Vertices are float64 V x 3 coordinates, faces are zero-based int64 F x 3
index triples. Mesh values are immutable after construction and safe to
share read-only. All meshes taking part in one pose-transfer pair must
carry the identical face list.
"""

import os
from dataclasses import dataclass

import numpy as np

# Normalized coordinates stay inside +/-NORM_MARGIN so regression targets
# keep clear of the tanh saturation boundary.
NORM_MARGIN = 0.95


class MeshError(ValueError):
    pass


class ObjFormatError(MeshError):
    pass


class TopologyError(MeshError):
    pass


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError(f"vertices must be Vx3, got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must be Fx3, got {faces.shape}")
        if faces.size and ((faces < 0).any() or (faces >= len(verts)).any()):
            raise MeshError(
                f"face index out of range for {len(verts)} vertices"
            )
        if faces.size and (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        ).any():
            raise MeshError("degenerate face repeats a vertex index")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        verts.flags.writeable = False
        faces.flags.writeable = False

    @property
    def vertex_count(self):
        return self.vertices.shape[0]

    @property
    def face_count(self):
        return self.faces.shape[0]

    def same_topology(self, other):
        return self.faces.shape == other.faces.shape and (
            self.faces == other.faces
        ).all()


def _require_dataset_mesh(mesh, source):
    if mesh.vertex_count < 4 or mesh.face_count < 1:
        raise MeshError(
            f"{source}: dataset mesh needs >=4 vertices and >=1 face, "
            f"got V={mesh.vertex_count}, F={mesh.face_count}"
        )
    return mesh


def load_obj(path):
    """Read the v/f subset of ASCII OBJ; f entries may carry /vt/vn suffixes."""
    verts = []
    faces = []
    try:
        lines = open(path, "r", encoding="ascii").read().splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such OBJ file: {path}")
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) != 4:
                raise ObjFormatError(
                    f"{path}:{lineno}: vertex line needs 3 coordinates: {raw!r}"
                )
            try:
                verts.append([float(p) for p in parts[1:]])
            except ValueError:
                raise ObjFormatError(
                    f"{path}:{lineno}: bad vertex coordinate: {raw!r}"
                )
        elif tag == "f":
            if len(parts) != 4:
                raise ObjFormatError(
                    f"{path}:{lineno}: only triangle faces supported: {raw!r}"
                )
            idx = []
            for entry in parts[1:]:
                token = entry.split("/")[0]
                try:
                    i = int(token)
                except ValueError:
                    raise ObjFormatError(
                        f"{path}:{lineno}: bad face index {entry!r}"
                    )
                if i < 1:
                    raise ObjFormatError(
                        f"{path}:{lineno}: OBJ face indices are 1-based, got {i}"
                    )
                idx.append(i - 1)
            faces.append(idx)
        # ignore normals, texcoords, groups, materials
    if not verts:
        raise ObjFormatError(f"{path}: no vertices found")
    faces_arr = np.asarray(faces, dtype=np.int64).reshape(len(faces), 3)
    if faces_arr.size and (faces_arr >= len(verts)).any():
        raise ObjFormatError(
            f"{path}: face references vertex beyond the {len(verts)} defined"
        )
    return _require_dataset_mesh(Mesh(np.asarray(verts), faces_arr), path)


def save_obj(mesh, path):
    """Write ASCII OBJ with 17-significant-digit coordinates (bit round-trip)."""
    with open(path, "w", encoding="ascii") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def vertex_rings(mesh):
    """Neighbor indices per vertex, each list sorted ascending."""
    neighbors = [set() for _ in range(mesh.vertex_count)]
    for a, b, c in mesh.faces:
        neighbors[a].update((b, c))
        neighbors[b].update((a, c))
        neighbors[c].update((a, b))
    return [sorted(n) for n in neighbors]


def edge_list(mesh):
    """Distinct undirected edges as an Ex2 array with p < q, sorted."""
    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def directed_ring_edges(rings):
    """(p, q) for every vertex p and every ring neighbor q, in ring order."""
    src = []
    dst = []
    for p, ring in enumerate(rings):
        src.extend([p] * len(ring))
        dst.extend(ring)
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def normalize_to_unit_cube(mesh, margin=NORM_MARGIN):
    """Center the mesh and scale its longest axis to +/-margin.

    Returns (mesh, center, scale) with the inverse map
    original = normalized * scale + center. For a pose-transfer pair the
    frame is computed from the identity mesh and applied to both inputs.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("cannot normalize a mesh with zero bounding-box extent")
    center = (hi + lo) / 2.0
    scale = extent / (2.0 * margin)
    return apply_frame(mesh, center, scale), center, scale


def apply_frame(mesh, center, scale):
    return Mesh((mesh.vertices - center) / scale, mesh.faces)


def invert_frame(mesh, center, scale):
    return Mesh(mesh.vertices * scale + center, mesh.faces)


def permute_vertices(mesh, perm):
    """Reorder vertices so old index i lands at position perm[i].

    Faces are relabeled accordingly; the geometric shape is unchanged.
    """
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (mesh.vertex_count,) or not (
        np.sort(perm) == np.arange(mesh.vertex_count)
    ).all():
        raise MeshError(f"perm is not a bijection on [0, {mesh.vertex_count})")
    new_verts = np.empty_like(mesh.vertices)
    new_verts[perm] = mesh.vertices
    return Mesh(new_verts, perm[mesh.faces])


@dataclass(frozen=True)
class PosePair:
    """One (identity, pose, ground truth) training or evaluation triple."""

    identity: Mesh
    pose: Mesh
    gt: Mesh

    def __post_init__(self):
        if not (
            self.identity.same_topology(self.pose)
            and self.identity.same_topology(self.gt)
        ):
            raise TopologyError("pose pair meshes do not share one face list")


def write_manifest(path, triples):
    """One line per pair: identity, pose and ground-truth OBJ paths."""
    with open(path, "w", encoding="ascii") as f:
        for identity, pose, gt in triples:
            f.write(f"{identity}\t{pose}\t{gt}\n")


def read_manifest(path):
    triples = []
    for lineno, raw in enumerate(open(path, "r", encoding="ascii"), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise MeshError(f"{path}:{lineno}: manifest line needs 3 paths: {raw!r}")
        triples.append(tuple(parts))
    return triples


def load_pair(triple, base_dir=""):
    """Load and topology-check one manifest triple."""
    paths = [os.path.join(base_dir, p) if base_dir else p for p in triple]
    identity, pose, gt = (load_obj(p) for p in paths)
    return PosePair(identity, pose, gt)
