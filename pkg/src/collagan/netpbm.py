"""Binary PGM (P5) / PPM (P6) reading and writing with maxval 255."""

from __future__ import annotations

import os

import numpy as np


class NetpbmError(ValueError):
    pass


_WHITESPACE = b" \t\n\r\v\f"


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, token_start, position_after_token)."""
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise NetpbmError(f"unexpected end of header at byte {start}")
    return buf[start:pos], start, pos


def decode(buf: bytes) -> np.ndarray:
    """Parse a P5/P6 byte string into a (C, H, W) float64 array scaled to [0, 1]."""
    magic, _, pos = _next_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"bad magic {magic!r} at byte 0; expected P5 or P6")
    channels = 1 if magic == b"P5" else 3
    values = []
    for field in ("width", "height", "maxval"):
        token, start, pos = _next_token(buf, pos)
        if not token.isdigit():
            raise NetpbmError(f"non-numeric {field} {token!r} at byte {start}")
        values.append(int(token))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise NetpbmError(f"non-positive image size {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}; only 255 is handled")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise NetpbmError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise NetpbmError(f"truncated payload: expected {expected} bytes from byte {pos}, "
                          f"file ends at byte {len(buf)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode(image: np.ndarray) -> bytes:
    """Quantize a (C, H, W) or (H, W) image in [0, 1] to P5 (C=1) or P6 (C=3) bytes."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise NetpbmError(f"expected a 1- or 3-channel image, got shape {img.shape}")
    channels, height, width = img.shape
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (width, height)
    return header + q.transpose(1, 2, 0).tobytes()


def read_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode(buf)
    except NetpbmError as err:
        raise NetpbmError(f"{path}: {err}") from None


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    data = encode(image)
    with open(path, "wb") as fh:
        fh.write(data)


def extension_for(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"
