"""Triangle mesh loading, normalization and area-weighted surface sampling."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, EmptyInputError, MeshFormatError, MeshIOError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshFormatError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.where(norm > 0, n / norm, 0.0)
        object.__setattr__(self, "face_normals", n)

    @property
    def triangles(self) -> np.ndarray:
        """(M, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    @property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.astype("<f8").tobytes())
        h.update(self.faces.astype("<i8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class SurfaceSamples:
    """Struct-of-arrays batch of surface samples (position, face normal, face id)."""

    positions: np.ndarray
    normals: np.ndarray
    face_ids: np.ndarray

    def __len__(self):
        return len(self.positions)

    def subset(self, mask) -> "SurfaceSamples":
        return SurfaceSamples(self.positions[mask], self.normals[mask], self.face_ids[mask])


def _drop_degenerate(vertices, faces, source):
    mesh = TriMesh(vertices, faces)
    good = mesh.face_areas > 0
    dropped = int((~good).sum())
    if dropped:
        log.warning("%s: dropped %d degenerate faces", source, dropped)
        mesh = TriMesh(mesh.vertices, mesh.faces[good])
    if len(mesh.faces) == 0:
        raise EmptyInputError(f"{source}: mesh has no faces")
    return mesh


def _parse_floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise MeshFormatError(f"bad number in {tokens!r}", lineno) from None
    if not all(np.isfinite(vals)):
        raise MeshFormatError("non-finite coordinate", lineno)
    return vals


def _fan(poly, nverts, lineno):
    if len(poly) < 3:
        raise MeshFormatError("face with fewer than 3 vertices", lineno)
    for i in poly:
        if not 0 <= i < nverts:
            raise MeshFormatError(f"vertex index {i} out of range", lineno)
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _read_obj(lines):
    verts, faces, pending = [], [], []
    for lineno, raw in enumerate(lines, 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshFormatError("vertex needs 3 coordinates", lineno)
            verts.append(_parse_floats(parts[1:4], lineno))
        elif parts[0] == "f":
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError:
                raise MeshFormatError(f"bad face record {raw.strip()!r}", lineno) from None
            pending.append((idx, len(verts), lineno))
    for idx, seen, lineno in pending:
        # negative indices are relative to the vertices defined so far
        poly = [i - 1 if i > 0 else seen + i for i in idx]
        faces.extend(_fan(poly, len(verts), lineno))
    return verts, faces


def _header_tokens(lines):
    for lineno, raw in enumerate(lines, 1):
        parts = raw.split("#", 1)[0].split()
        if parts:
            yield lineno, parts


def _read_off(lines):
    it = _header_tokens(lines)
    try:
        lineno, parts = next(it)
        if parts[0].upper() != "OFF":
            raise MeshFormatError("missing OFF header", lineno)
        parts = parts[1:]
        if not parts:
            lineno, parts = next(it)
        nv, nf = int(parts[0]), int(parts[1])
        verts = []
        for _ in range(nv):
            lineno, parts = next(it)
            verts.append(_parse_floats(parts[:3], lineno))
        faces = []
        for _ in range(nf):
            lineno, parts = next(it)
            k = int(parts[0])
            faces.extend(_fan([int(p) for p in parts[1 : k + 1]], nv, lineno))
    except StopIteration:
        raise MeshFormatError("unexpected end of file") from None
    except (ValueError, IndexError):
        raise MeshFormatError("malformed record", lineno) from None
    return verts, faces


def _read_ply(lines):
    it = _header_tokens(lines)
    counts, order, vprops = {}, [], []
    current = None
    lineno = 0
    try:
        lineno, parts = next(it)
        if parts[0] != "ply":
            raise MeshFormatError("missing ply magic", lineno)
        while True:
            lineno, parts = next(it)
            if parts[0] == "format" and parts[1] != "ascii":
                raise MeshFormatError("only ASCII PLY is supported", lineno)
            if parts[0] == "element":
                current = parts[1]
                counts[current] = int(parts[2])
                order.append(current)
            elif parts[0] == "property" and current == "vertex":
                vprops.append(parts[-1])
            elif parts[0] == "end_header":
                break
        xyz = [vprops.index(a) for a in "xyz"]
        verts, faces = [], []
        for elem in order:
            for _ in range(counts[elem]):
                lineno, parts = next(it)
                if elem == "vertex":
                    verts.append(_parse_floats([parts[i] for i in xyz], lineno))
                elif elem == "face":
                    k = int(parts[0])
                    faces.extend(_fan([int(p) for p in parts[1 : k + 1]], counts.get("vertex", 0), lineno))
    except StopIteration:
        raise MeshFormatError("unexpected end of file", lineno) from None
    except (ValueError, IndexError):
        raise MeshFormatError("malformed record", lineno) from None
    return verts, faces


_READERS = {".obj": _read_obj, ".off": _read_off, ".ply": _read_ply}


def load_mesh(path) -> TriMesh:
    path = Path(path)
    reader = _READERS.get(path.suffix.lower())
    if reader is None:
        raise MeshFormatError(f"unsupported mesh format {path.suffix!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from exc
    verts, faces = reader(text.splitlines())
    if not verts or not faces:
        raise EmptyInputError(f"{path}: mesh has no vertices or faces")
    return _drop_degenerate(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64), str(path))


def obj_text(mesh: TriMesh, header: str | None = None) -> str:
    # repr() of a float64 round-trips exactly
    out = [f"# {line}" for line in header.splitlines()] if header else []
    out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(out) + "\n"


def save_obj(mesh: TriMesh, path, header: str | None = None) -> None:
    Path(path).write_text(obj_text(mesh, header))


def normalize_unit_sphere(mesh: TriMesh) -> TriMesh:
    """Center on the vertex bounding-box center and scale so the farthest vertex has norm 1."""
    v = mesh.vertices
    if len(v) == 0:
        raise EmptyInputError("cannot normalize an empty mesh")
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max()
    if not radius > 0:
        raise DegenerateInputError("all vertices coincide")
    return TriMesh((v - center) / radius, mesh.faces)


def sample_surface(mesh: TriMesh, count: int, seed: int) -> SurfaceSamples:
    """Stratified area-proportional surface samples carrying their face normals."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    # one uniform draw per stratum [k/n, (k+1)/n)
    u = (np.arange(count) + rng.random(count)) / count
    face_ids = np.minimum(np.searchsorted(cdf, u, side="right"), len(areas) - 1)
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    tri = mesh.triangles[face_ids]
    pos = np.einsum("nk,nkd->nd", bary, tri)
    return SurfaceSamples(pos, mesh.face_normals[face_ids].copy(), face_ids)


def edge_use_counts(mesh: TriMesh) -> np.ndarray:
    """Number of faces using each undirected edge."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts
