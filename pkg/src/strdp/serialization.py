"""STRD1 array containers and 8-bit RGB PNG images.

Container layout (all integers little-endian)::

    magic      5 bytes  b"STRD1"
    count      u32      number of entries
    per entry:
      name_len u32, name (UTF-8, name_len bytes)
      dtype    u8       0 = float32, 1 = float64
      rank     u32
      dims     rank x u64
      nbytes   u64      must equal prod(dims) * itemsize
      data     nbytes   C-order, little-endian
"""
import io
import os
import struct
from collections import OrderedDict

import numpy as np
from PIL import Image
import torch

from .errors import FormatError, InvalidInputError, ShapeError

MAGIC = b"STRD1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _to_numpy(arr):
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise InvalidInputError(f"unsupported dtype {arr.dtype}; only float32/float64 are stored")
    return arr


def encode_container(entries) -> bytes:
    items = list(entries.items()) if hasattr(entries, "items") else list(entries)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise InvalidInputError(f"duplicate entry names: {dupes}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = _to_numpy(arr)
        code = _CODES[arr.dtype]
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BI", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    return buf.getvalue()


def save_container(path, entries):
    """Write ``entries`` (mapping or (name, array) pairs) and fsync."""
    data = encode_container(entries)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise OSError(f"could not write container {path}: {exc}") from exc


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated container while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data: bytes) -> "OrderedDict[str, np.ndarray]":
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic, not an STRD1 container", 0)
    (count,) = r.unpack("<I", "entry count")
    entries = OrderedDict()
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<I", "name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", start) from None
        code, rank = r.unpack("<BI", "dtype/rank")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}", r.pos - 5)
        dims = r.unpack(f"<{rank}Q", "shape")
        (nbytes,) = r.unpack("<Q", "byte length")
        dtype = _DTYPES[code]
        if nbytes != int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize:
            raise FormatError(f"entry {name!r}: byte length {nbytes} disagrees with shape {dims}",
                              r.pos - 8)
        if name in entries:
            raise FormatError(f"duplicate entry name {name!r}", start)
        raw = r.take(nbytes, f"data of {name!r}")
        entries[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if r.pos != len(data):
        raise FormatError("trailing bytes after last entry", r.pos)
    return entries


def load_container(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode_container(fh.read())


def module_entries(module, prefix):
    return [(f"{prefix}.{k}", v) for k, v in module.state_dict().items()]


def load_module_entries(module, entries, prefix):
    state = {k[len(prefix) + 1:]: torch.from_numpy(np.array(v))
             for k, v in entries.items() if k.startswith(prefix + ".")}
    if not state:
        raise FormatError(f"container holds no entries with prefix {prefix!r}")
    try:
        module.load_state_dict(state)
    except RuntimeError as exc:
        raise ShapeError(f"weights under {prefix!r} do not fit the configured model: {exc}") from exc


def read_image(path) -> torch.Tensor:
    """8-bit PNG -> float64 tensor (3, H, W) in [0, 1]. Grayscale is promoted to RGB."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot read image ({exc})") from exc
    if img.format != "PNG":
        raise FormatError(f"{path}: only PNG is supported, got {img.format}")
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise FormatError(f"{path}: {img.mode} images (16-bit or float) are not supported")
    if img.mode not in ("RGB", "L", "RGBA", "LA", "P", "1"):
        raise FormatError(f"{path}: unsupported PNG mode {img.mode}")
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def to_uint8(img) -> np.ndarray:
    arr = torch.as_tensor(img, dtype=torch.float64).clamp(0.0, 1.0).numpy()
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {arr.shape}")
    return np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def quantize(img) -> torch.Tensor:
    """The exact values ``read_image`` returns after ``write_image``."""
    return torch.from_numpy(to_uint8(img).transpose(2, 0, 1).astype(np.float64) / 255.0)


def write_image(path, img):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG", optimize=False,
                                                    compress_level=6)
