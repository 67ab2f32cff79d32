"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CLGN" | u32 version | u32 len + UTF-8 config text
    u32 tensor count, then per tensor:
        u32 name len | name | u8 dtype tag | u8 rank | u32 extents... | payload
    u64 generator Adam t | u64 discriminator Adam t
    u32 len + UTF-8 RNG state text | u64 joint step counter

Tensor names are ``G/<param>``, ``D/<param>`` and ``adam_g/m/<param>`` style
moment entries (``adam_g``/``adam_d``, ``m``/``v``).
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .optim import Adam
from .training import TrainConfig, TrainingState, init_state, parse_key_values

MAGIC = b"CLGN"
VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _rng_text(rng: np.random.Generator) -> str:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"only PCG64 generators can be saved, got {st['bit_generator']}")
    return (f"bit_generator = PCG64\nstate = {st['state']['state']}\ninc = {st['state']['inc']}\n"
            f"has_uint32 = {st['has_uint32']}\nuinteger = {st['uinteger']}\n")


def _rng_from_text(text: str) -> np.random.Generator:
    kv = parse_key_values(text)
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": kv["bit_generator"],
        "state": {"state": int(kv["state"]), "inc": int(kv["inc"])},
        "has_uint32": int(kv["has_uint32"]),
        "uinteger": int(kv["uinteger"]),
    }
    return rng


def _named_tensors(state: TrainingState):
    for prefix, module in (("G", state.G), ("D", state.D)):
        for name, p in module.named_parameters():
            yield f"{prefix}/{name}", p.data
    for prefix, opt in (("adam_g", state.opt_g), ("adam_d", state.opt_d)):
        for name in opt.params:
            if name in opt.state.m:
                yield f"{prefix}/m/{name}", opt.state.m[name]
                yield f"{prefix}/v/{name}", opt.state.v[name]


def encode_checkpoint(state: TrainingState) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _str(state.config.to_text())]
    tensors = list(_named_tensors(state))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        tag = _DTYPE_TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
        parts += [_str(name), struct.pack("<BB", tag, arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()]
    parts.append(struct.pack("<QQ", state.opt_g.state.t, state.opt_d.state.t))
    parts.append(_str(_rng_text(state.rng)))
    parts.append(struct.pack("<Q", state.step))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<I", f"{what} length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as err:
            raise CheckpointError(f"{what} at offset {self.pos - n} is not UTF-8") from err


def decode_checkpoint(buf: bytes) -> TrainingState:
    """Parse everything first; the model is only built once the whole file checks out."""
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    config = TrainConfig().updated(parse_key_values(r.string("config")))
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        start = r.pos
        name = r.string("tensor name")
        tag, rank = r.unpack("<BB", f"header of {name}")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name} at offset {start}")
        shape = r.unpack(f"<{rank}I", f"shape of {name}")
        dtype = _TAG_DTYPES[tag].newbyteorder("<")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = r.take(nbytes, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(_TAG_DTYPES[tag])
    t_g, t_d = r.unpack("<QQ", "optimizer step counters")
    rng = _rng_from_text(r.string("rng state"))
    (step,) = r.unpack("<Q", "step counter")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")

    state = init_state(config)
    for prefix, module in (("G", state.G), ("D", state.D)):
        for name, p in module.named_parameters():
            key = f"{prefix}/{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint lacks parameter {key}")
            if tensors[key].shape != p.shape:
                raise CheckpointError(f"parameter {key} has shape {tensors[key].shape}, model expects {p.shape}")
            p.data = tensors.pop(key).astype(p.dtype)
    for prefix, opt, t in (("adam_g", state.opt_g, t_g), ("adam_d", state.opt_d, t_d)):
        opt.state.t = t
        for name in opt.params:
            if f"{prefix}/m/{name}" in tensors:
                opt.state.m[name] = tensors.pop(f"{prefix}/m/{name}")
                opt.state.v[name] = tensors.pop(f"{prefix}/v/{name}")
    if tensors:
        raise CheckpointError(f"checkpoint holds unknown tensors: {sorted(tensors)[:5]}")
    state.rng = rng
    state.step = step
    return state


def save_checkpoint(path: str | os.PathLike, state: TrainingState) -> None:
    data = encode_checkpoint(state)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> TrainingState:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
