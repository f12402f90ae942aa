"""Bit-exact binary file formats.

Snapshot (.wfld):
    magic "WFLD" | u16 version | u32 nx | u32 ny | u32 n_channels | u64 step |
    channels u, v, p (, sigma) as float32 LE, row-major per channel.

Model checkpoint (.wnet):
    magic "WNET" | u16 version | u8 precision (0=single, 1=double) |
    u8 layer count | per layer: u32 out, u32 in, u32 kh, u32 kw,
    weights then biases in the declared precision LE | u8 adam flag |
    if set: u64 t, f64 beta1, f64 beta2, f64 eps, per layer the first- and
    second-moment weights/biases in the declared precision.

Pool dump (.wpol):
    magic "WPOL" | u16 version | u8 precision | u32 n_entries | f64 reset_prob |
    per entry: the snapshot record fields (u32 nx, u32 ny, u32 n_channels=4,
    u64 step, channels u, v, p, sigma at the declared precision), then
    u32 age, u16 n_sources, per source u32 i0, u32 j0, u32 w, u32 h,
    f64 T, f64 bias.

All integers little-endian.  Reads validate magic/version/shapes and fail with
a FormatError naming the offending field; no partial objects are returned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"WFLD"
MODEL_MAGIC = b"WNET"
POOL_MAGIC = b"WPOL"
SNAPSHOT_VERSION = 1
MODEL_VERSION = 1
POOL_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _precision_code(dtype) -> int:
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return 0
    if dtype == np.float64:
        return 1
    raise FormatError(f"unsupported field dtype {dtype}")


class _Reader:
    def __init__(self, f, path):
        self.f = f
        self.path = path

    def bytes(self, n: int, what: str) -> bytes:
        buf = self.f.read(n)
        if len(buf) != n:
            raise FormatError(f"{self.path}: truncated while reading {what}")
        return buf

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.bytes(struct.calcsize(fmt), what))

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        buf = self.bytes(count * dtype.itemsize, what)
        return np.frombuffer(buf, dtype=dtype).copy()

    def expect_eof(self, what: str) -> None:
        if self.f.read(1):
            raise FormatError(f"{self.path}: trailing bytes after {what}")


@dataclass
class Snapshot:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    step: int
    sigma: np.ndarray | None = None

    @property
    def channels(self):
        chans = [self.u, self.v, self.p]
        if self.sigma is not None:
            chans.append(self.sigma)
        return chans


def write_snapshot(path, state, sigma: np.ndarray | None = None) -> None:
    """Write a WaveState (plus optional sigma channel) as float32."""
    channels = [state.u, state.v, state.p]
    if sigma is not None:
        channels.append(sigma)
    nx, ny = state.p.shape
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<HIIIQ", SNAPSHOT_VERSION, nx, ny, len(channels), state.step))
        for ch in channels:
            f.write(np.ascontiguousarray(ch, dtype="<f4").tobytes())


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as f:
        r = _Reader(f, path)
        if r.bytes(4, "magic") != SNAPSHOT_MAGIC:
            raise FormatError(f"{path}: bad magic, not a WFLD snapshot")
        version, nx, ny, nch, step = r.unpack("<HIIIQ", "snapshot header")
        if version != SNAPSHOT_VERSION:
            raise FormatError(f"{path}: unsupported snapshot version {version}")
        if nch not in (3, 4):
            raise FormatError(f"{path}: snapshot must have 3 or 4 channels, got {nch}")
        names = ("u", "v", "p", "sigma")[:nch]
        fields = [
            r.array(np.dtype("<f4"), nx * ny, f"channel {name}").reshape(nx, ny)
            for name in names
        ]
        r.expect_eof("channel data")
    u, v, p = fields[:3]
    sigma = fields[3] if nch == 4 else None
    return Snapshot(u, v, p, int(step), sigma)


def _write_model_body(f, params, adam) -> None:
    code = _precision_code(params.dtype)
    dtype = _DTYPES[code]
    f.write(MODEL_MAGIC)
    f.write(struct.pack("<HBB", MODEL_VERSION, code, len(params.layers)))
    for layer in params.layers:
        out, cin, kh, kw = layer.weights.shape
        f.write(struct.pack("<IIII", out, cin, kh, kw))
        f.write(np.ascontiguousarray(layer.weights, dtype=dtype).tobytes())
        f.write(np.ascontiguousarray(layer.biases, dtype=dtype).tobytes())
    if adam is None:
        f.write(struct.pack("<B", 0))
        return
    f.write(struct.pack("<B", 1))
    f.write(struct.pack("<Qddd", adam.t, adam.beta1, adam.beta2, adam.eps))
    for moments in (adam.m, adam.v):
        for layer in moments.layers:
            f.write(np.ascontiguousarray(layer.weights, dtype=dtype).tobytes())
            f.write(np.ascontiguousarray(layer.biases, dtype=dtype).tobytes())


def write_model(path, params, adam=None) -> None:
    with open(path, "wb") as f:
        _write_model_body(f, params, adam)


def read_model(path, dtype=None):
    """Read (params, adam_state_or_None); `dtype` converts on load (widening
    a single-precision checkpoint to double is exact)."""
    from .nn import ConvLayer, ModelParams
    from .optim import AdamState

    with open(path, "rb") as f:
        r = _Reader(f, path)
        if r.bytes(4, "magic") != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic, not a WNET checkpoint")
        version, code, n_layers = r.unpack("<HBB", "model header")
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown precision flag {code}")
        stored = _DTYPES[code]
        shapes = []
        layers = []
        for li in range(n_layers):
            out, cin, kh, kw = r.unpack("<IIII", f"layer {li + 1} shape")
            if kh != 3 or kw != 3:
                raise FormatError(f"{path}: layer {li + 1} kernel is {kh}x{kw}, expected 3x3")
            w = r.array(stored, out * cin * kh * kw, f"layer {li + 1} weights")
            b = r.array(stored, out, f"layer {li + 1} biases")
            shapes.append((out, cin, kh, kw))
            layers.append(ConvLayer(w.reshape(out, cin, kh, kw), b))
        (adam_flag,) = r.unpack("<B", "adam presence flag")
        adam = None
        if adam_flag == 1:
            t, b1, b2, eps = r.unpack("<Qddd", "adam header")
            moments = []
            for tag in ("first", "second"):
                ms = []
                for li, (out, cin, kh, kw) in enumerate(shapes):
                    mw = r.array(stored, out * cin * kh * kw, f"adam {tag} moment, layer {li + 1} weights")
                    mb = r.array(stored, out, f"adam {tag} moment, layer {li + 1} biases")
                    ms.append(ConvLayer(mw.reshape(out, cin, kh, kw), mb))
                moments.append(ModelParams(*ms))
            adam = AdamState(int(t), b1, b2, eps, moments[0], moments[1])
        elif adam_flag != 0:
            raise FormatError(f"{path}: bad adam presence flag {adam_flag}")
        r.expect_eof("checkpoint data")
    params = ModelParams(*layers)
    if dtype is not None and np.dtype(dtype) != params.dtype:
        params = params.astype(dtype)
        if adam is not None:
            adam = AdamState(
                adam.t, adam.beta1, adam.beta2, adam.eps,
                adam.m.astype(dtype), adam.v.astype(dtype),
            )
    return params, adam


def write_pool(path, pool) -> None:
    code = _precision_code(pool.dtype)
    dtype = _DTYPES[code]
    with open(path, "wb") as f:
        f.write(POOL_MAGIC)
        f.write(struct.pack("<HBId", POOL_VERSION, code, len(pool.entries), pool.reset_prob))
        for e in pool.entries:
            nx, ny = e.state.p.shape
            f.write(struct.pack("<IIIQ", nx, ny, 4, e.state.step))
            for ch in (e.state.u, e.state.v, e.state.p, e.sigma):
                f.write(np.ascontiguousarray(ch, dtype=dtype).tobytes())
            f.write(struct.pack("<IH", e.age, len(e.sources)))
            for s in e.sources:
                f.write(struct.pack("<IIIIdd", s.i0, s.j0, s.w, s.h, s.T, s.bias))


def read_pool(path, spec, rng, **domain_kwargs):
    """Rebuild a TrainingPool dumped by write_pool (spec and rng supplied by
    the caller; sigma is shared across entries, as written)."""
    from .grid import SourceSpec, WaveState, build_sigma
    from .pool import PoolEntry, TrainingPool

    with open(path, "rb") as f:
        r = _Reader(f, path)
        if r.bytes(4, "magic") != POOL_MAGIC:
            raise FormatError(f"{path}: bad magic, not a WPOL pool dump")
        version, code, n_entries, reset_prob = r.unpack("<HBId", "pool header")
        if version != POOL_VERSION:
            raise FormatError(f"{path}: unsupported pool version {version}")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown precision flag {code}")
        dtype = _DTYPES[code]
        sigma = build_sigma(spec).astype(dtype)
        entries = []
        for ei in range(n_entries):
            nx, ny, nch, step = r.unpack("<IIIQ", f"entry {ei} header")
            if (nx, ny) != spec.shape:
                raise FormatError(
                    f"{path}: entry {ei} grid {nx}x{ny} does not match spec {spec.nx}x{spec.ny}"
                )
            if nch != 4:
                raise FormatError(f"{path}: entry {ei} must carry 4 channels, got {nch}")
            chans = [
                r.array(dtype, nx * ny, f"entry {ei} channel {name}").reshape(nx, ny)
                for name in ("u", "v", "p", "sigma")
            ]
            age, n_sources = r.unpack("<IH", f"entry {ei} trailer")
            sources = []
            for si in range(n_sources):
                i0, j0, w, h, T, bias = r.unpack("<IIIIdd", f"entry {ei} source {si}")
                sources.append(SourceSpec(i0, j0, w, h, T, bias))
            state = WaveState(chans[0], chans[1], chans[2], int(step))
            entries.append(PoolEntry(state, sources, sigma, int(age)))
        r.expect_eof("pool data")
    return TrainingPool(
        entries, reset_prob, rng, spec, np.dtype(dtype), dict(domain_kwargs)
    )


def export_csv(field: np.ndarray, path) -> None:
    """One CSV row per grid row (fixed i), full round-trip precision."""
    np.savetxt(path, np.asarray(field), fmt="%.17g", delimiter=",")


def export_pgm(field: np.ndarray, path) -> None:
    """8-bit grayscale: 128 + 127 * field / max|field|, clamped to [0, 255]."""
    field = np.asarray(field, dtype=np.float64)
    peak = np.abs(field).max()
    scaled = field / peak if peak > 0 else np.zeros_like(field)
    pix = np.clip(np.rint(128.0 + 127.0 * scaled), 0, 255).astype(np.uint8)
    nx, ny = pix.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{ny} {nx}\n255\n".encode("ascii"))
        f.write(pix.tobytes())
