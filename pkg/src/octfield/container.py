"""The OCTF binary container: magic, format version, then typed little-endian chunks.

Layout::

    b"OCTF" | u32 version | { 4-byte tag | u64 length | payload }*

Known tags are TREE, PARM, SAMP and CONF. Readers skip unknown tags with a warning.
All floating-point payloads are little-endian float64.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import ContainerError
from .field_oracle import SampleSet
from .octree import Octant, OctreeField

log = logging.getLogger(__name__)

MAGIC = b"OCTF"
VERSION = 1
KNOWN_TAGS = ("TREE", "PARM", "SAMP", "CONF")


def write_container(path, chunks, version: int = VERSION) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", version))
    for tag, payload in chunks:
        t = tag.encode("ascii")
        if len(t) != 4:
            raise ContainerError(f"chunk tag must be 4 ASCII bytes, got {tag!r}")
        buf.write(t)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    Path(path).write_bytes(buf.getvalue())


def read_container(path) -> dict[str, list[bytes]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not an OCTF container")
    if len(raw) < 8:
        raise ContainerError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version > VERSION:
        log.warning("%s: container version %d is newer than %d", path, version, VERSION)
    out: dict[str, list[bytes]] = {}
    pos = 8
    while pos < len(raw):
        if pos + 12 > len(raw):
            raise ContainerError(f"{path}: truncated chunk header at byte {pos}")
        tag = raw[pos : pos + 4].decode("ascii", errors="replace")
        (length,) = struct.unpack_from("<Q", raw, pos + 4)
        pos += 12
        if pos + length > len(raw):
            raise ContainerError(f"{path}: chunk {tag} overruns the file")
        payload = raw[pos : pos + length]
        pos += length
        if tag not in KNOWN_TAGS:
            log.warning("%s: skipping unknown chunk %r", path, tag)
            continue
        out.setdefault(tag, []).append(payload)
    return out


# -- primitives ---------------------------------------------------------------


def write_varint(buf, n: int) -> None:
    if n < 0:
        raise ValueError("varint must be non-negative")
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            buf.write(bytes([byte | 0x80]))
        else:
            buf.write(bytes([byte]))
            return


def read_varint(buf) -> int:
    shift = result = 0
    while True:
        b = buf.read(1)
        if not b:
            raise ContainerError("truncated varint")
        result |= (b[0] & 0x7F) << shift
        if not b[0] & 0x80:
            return result
        shift += 7


def address_code(address) -> int:
    """Locational code: a leading 1 followed by three bits per level."""
    code = 1
    for i in address:
        code = (code << 3) | int(i)
    return code


def code_address(code: int) -> tuple:
    out = []
    while code > 1:
        out.append(code & 7)
        code >>= 3
    return tuple(reversed(out))


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise ContainerError("truncated payload")
    return struct.unpack(fmt, data)


def _write_array(buf, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(struct.pack("<B", a.ndim))
    for s in a.shape:
        buf.write(struct.pack("<Q", s))
    buf.write(a.tobytes())


def _read_array(buf) -> np.ndarray:
    (ndim,) = _read(buf, "<B")
    shape = tuple(_read(buf, "<Q")[0] for _ in range(ndim))
    n = int(np.prod(shape)) if shape else 1
    data = buf.read(8 * n)
    if len(data) != 8 * n:
        raise ContainerError("truncated array")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def _write_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def _read_str(buf) -> str:
    (n,) = _read(buf, "<H")
    return buf.read(n).decode("utf-8")


# -- chunk codecs -------------------------------------------------------------


def encode_params(arrays) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, a in arrays.items():
        _write_str(buf, name)
        _write_array(buf, a)
    return buf.getvalue()


def decode_params(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    buf = io.BytesIO(payload)
    (n,) = _read(buf, "<I")
    out = OrderedDict()
    for _ in range(n):
        name = _read_str(buf)
        out[name] = _read_array(buf)
    return out


def encode_tree(tree: OctreeField) -> bytes:
    nodes = list(tree.nodes())
    buf = io.BytesIO()
    buf.write(struct.pack("<IdI", tree.max_depth, tree.tau, len(nodes)))
    for n in nodes:
        write_varint(buf, address_code(n.address))
        buf.write(struct.pack("<BB", n.alpha, n.beta))
        buf.write(struct.pack("<4d", *n.center, n.half_size))
    widths = {len(n.geometry_latent) for n in nodes if n.geometry_latent is not None}
    width = widths.pop() if widths else 0
    buf.write(struct.pack("<I", width))
    if width:
        for n in nodes:
            if n.geometry_latent is None:
                buf.write(b"\x00")
            else:
                buf.write(b"\x01")
                buf.write(np.ascontiguousarray(n.geometry_latent, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_tree(payload: bytes) -> OctreeField:
    buf = io.BytesIO(payload)
    max_depth, tau, count = _read(buf, "<IdI")
    nodes = []
    by_addr = {}
    for _ in range(count):
        addr = code_address(read_varint(buf))
        alpha, beta = _read(buf, "<BB")
        cx, cy, cz, half = _read(buf, "<4d")
        node = Octant(addr, np.array([cx, cy, cz]), half, alpha, beta)
        nodes.append(node)
        by_addr[addr] = node
        if addr:
            parent = by_addr.get(addr[:-1])
            if parent is None:
                raise ContainerError(f"tree record {addr} precedes its parent")
            parent.children.append(node)
    if not nodes or nodes[0].address != ():
        raise ContainerError("tree chunk has no root record")
    (width,) = _read(buf, "<I")
    if width:
        for n in nodes:
            if buf.read(1) == b"\x01":
                n.geometry_latent = np.frombuffer(buf.read(8 * width), dtype="<f8").astype(np.float64)
    for n in nodes:
        if n.children and len(n.children) != 8:
            raise ContainerError(f"node {n.address} has {len(n.children)} children")
    return OctreeField(nodes[0], max_depth, tau)


def encode_conf(conf: dict) -> bytes:
    return json.dumps(conf, sort_keys=True).encode("utf-8")


def decode_conf(payload: bytes) -> dict:
    return json.loads(payload.decode("utf-8"))


def encode_sampleset(key, s: SampleSet) -> bytes:
    digest, address, seed = key
    buf = io.BytesIO()
    _write_str(buf, digest)
    write_varint(buf, address_code(address))
    buf.write(struct.pack("<Q", seed))
    _write_array(buf, s.points)
    _write_array(buf, s.labels.astype(np.float64))
    _write_array(buf, s.weights)
    _write_array(buf, s.distances)
    return buf.getvalue()


def decode_sampleset(payload: bytes):
    buf = io.BytesIO(payload)
    digest = _read_str(buf)
    address = code_address(read_varint(buf))
    (seed,) = _read(buf, "<Q")
    pts = _read_array(buf)
    labels = _read_array(buf).astype(np.int8)
    weights = _read_array(buf)
    dist = _read_array(buf)
    return (digest, address, seed), SampleSet(address, pts, labels, weights, dist)
