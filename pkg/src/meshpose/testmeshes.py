"""Small deterministic meshes for checks and demos."""

import numpy as np

from .mesh import Mesh


def grid_mesh(rows, cols, jitter=0.0, seed=0):
    """Triangulated rows x cols planar grid, optionally jittered in 3D."""
    ys, xs = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    verts = np.stack(
        [xs.ravel() / max(cols - 1, 1), ys.ravel() / max(rows - 1, 1), np.zeros(rows * cols)],
        axis=1,
    )
    if jitter:
        rng = np.random.default_rng(seed)
        verts = verts + rng.uniform(-jitter, jitter, verts.shape)
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            b = a + 1
            d = a + cols
            e = d + 1
            faces.append((a, b, d))
            faces.append((b, e, d))
    return Mesh(verts, np.asarray(faces, dtype=np.int64))


def tetrahedron():
    verts = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]], dtype=np.int64)
    return Mesh(verts, faces)
