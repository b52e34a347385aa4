"""Procedural watertight meshes used by tests, demos and the CLI."""

from __future__ import annotations

import numpy as np

from .mesh_io import TriMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(v) * radius + np.asarray(center, dtype=np.float64), np.array(faces))


def box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    # outward-facing quads over corner bit patterns (x=1, y=2, z=4)
    quads = [
        (0, 2, 3, 1), (4, 5, 7, 6),  # z-, z+
        (0, 1, 5, 4), (2, 6, 7, 3),  # y-, y+
        (0, 4, 6, 2), (1, 3, 7, 5),  # x-, x+
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriMesh(corners, np.array(faces))


def torus(major: float = 0.7, minor: float = 0.25, n_major: int = 48, n_minor: int = 24) -> TriMesh:
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    x = (major + minor * np.cos(ww)) * np.cos(uu)
    y = (major + minor * np.cos(ww)) * np.sin(uu)
    z = minor * np.sin(ww)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(faces))


def merge(*meshes: TriMesh) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def transformed(mesh: TriMesh, rotation=None, translation=(0.0, 0.0, 0.0), scale: float = 1.0) -> TriMesh:
    r = np.eye(3) if rotation is None else np.asarray(rotation)
    return TriMesh(scale * mesh.vertices @ r.T + np.asarray(translation), mesh.faces)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def procedural_suite(count: int = 10, seed: int = 0) -> list[TriMesh]:
    """Spheres, tori and unions of boxes with random placement, cycled to ``count``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = i % 3
        rot = random_rotation(rng)
        if kind == 0:
            m = icosphere(3, radius=rng.uniform(0.5, 0.9), center=rng.uniform(-0.1, 0.1, 3))
        elif kind == 1:
            m = torus(rng.uniform(0.5, 0.7), rng.uniform(0.12, 0.25), 32, 16)
        else:
            parts = []
            for _ in range(int(rng.integers(2, 4))):
                c = rng.uniform(-0.4, 0.4, 3)
                h = rng.uniform(0.1, 0.35, 3)
                parts.append(box(c - h, c + h))
            m = merge(*parts)
        out.append(transformed(m, rot))
    return out
