"""Readers and writers for images, LUTs, weight archives and context maps.

Formats:

* PPM (P6) color images; written 8-bit, read with any maxval up to 65535.
* PGM (P5) context maps; written 16-bit big-endian, value = sample / 65535.
* ``.cube`` 3D LUTs; red index varies fastest in the data rows.
* 4D LUT binary, little-endian: ``SALUT4D\\0``, u32 version (1), u32 D,
  u32 C, u32 channels (3), then ``3*C*D^3`` float32 in ``(c, k, r, g, b)``
  order with ``b`` fastest.
* Weight archive, little-endian: ``SALUTWT\\0``, u32 version (1), u32 count,
  then per tensor u32 name length, UTF-8 name, u32 rank, u32 dims, float32
  data.

Every ``parse_*`` function accepts bytes and raises :class:`FormatError`
(never anything else) on malformed input.
"""

from __future__ import annotations

import math
import re
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, DataError, FormatError, TruncatedError
from .lut import MAX_SIZE, BasisLutBank, Lut3D, Lut4D, as_image
from .nn import WeightArchive

LUT4D_MAGIC = b"SALUT4D\0"
WEIGHTS_MAGIC = b"SALUTWT\0"
FORMAT_VERSION = 1
MAX_BINS = 256
MAX_RANK = 8
_LUT4D_HEADER = struct.Struct("<8sIIII")
_U32 = struct.Struct("<I")


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


# -- PNM ------------------------------------------------------------------

_WS = b" \t\r\n\v\f"


def _pnm_header(data: bytes, magic: bytes, n_fields: int):
    if not data.startswith(magic):
        raise BadMagicError(f"expected {magic.decode()} signature", offset=0)
    pos = len(magic)
    values = []
    while len(values) < n_fields:
        if pos >= len(data):
            raise TruncatedError("header ended early", offset=pos)
        c = data[pos:pos + 1]
        if c in (b" ", b"\t", b"\r", b"\n", b"\v", b"\f"):
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            if pos - start > 9:
                raise FormatError("header number too large", offset=start)
            values.append(int(data[start:pos]))
        else:
            raise FormatError(f"unexpected byte {c!r} in header", offset=pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("expected whitespace after header", offset=pos)
    return values, pos + 1


def _pnm_raster(data: bytes, pos: int, count: int, maxval: int) -> np.ndarray:
    if not 1 <= maxval <= 65535:
        raise FormatError(f"maxval must be in [1, 65535], got {maxval}", offset=pos)
    width = 1 if maxval < 256 else 2
    need = count * width
    if len(data) - pos < need:
        raise TruncatedError(f"raster needs {need} bytes, found {len(data) - pos}", offset=len(data))
    raw = np.frombuffer(data, dtype=np.uint8 if width == 1 else ">u2", count=count, offset=pos)
    if raw.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval", offset=pos)
    return raw.astype(np.float64) / maxval


def parse_ppm(data: bytes) -> np.ndarray:
    """Binary P6 to a float32 ``(H, W, 3)`` image in [0, 1]."""
    (w, h, maxval), pos = _pnm_header(data, b"P6", 3)
    if w == 0 or h == 0:
        raise FormatError("image has zero size", offset=pos)
    vals = _pnm_raster(data, pos, w * h * 3, maxval)
    return vals.reshape(h, w, 3).astype(np.float32)


def encode_ppm(img) -> bytes:
    img = as_image(img)
    h, w = img.shape[:2]
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_ppm(path) -> np.ndarray:
    return parse_ppm(_read(path))


def write_ppm(path, img) -> None:
    Path(path).write_bytes(encode_ppm(img))


def parse_ctx(data: bytes) -> np.ndarray:
    """Binary P5 to a float32 ``(H, W)`` map in [0, 1]."""
    (w, h, maxval), pos = _pnm_header(data, b"P5", 3)
    if w == 0 or h == 0:
        raise FormatError("map has zero size", offset=pos)
    return _pnm_raster(data, pos, w * h, maxval).reshape(h, w).astype(np.float32)


def encode_ctx(ctx) -> bytes:
    a = np.asarray(ctx, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DataError(f"context map must be a non-empty (H, W) array, got {a.shape}")
    h, w = a.shape
    q = np.rint(np.clip(a, 0.0, 1.0) * 65535.0).astype(">u2")
    return b"P5\n%d %d\n65535\n" % (w, h) + q.tobytes()


def read_ctx(path) -> np.ndarray:
    return parse_ctx(_read(path))


def write_ctx(path, ctx) -> None:
    Path(path).write_bytes(encode_ctx(ctx))


# -- .cube ----------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_ROW = re.compile(rf"^\s*({_NUM})\s+({_NUM})\s+({_NUM})\s*$")


def _floats(parts, lineno):
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise FormatError("expected numbers", line=lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError("non-finite value", line=lineno)
    return vals


def parse_cube(data: bytes) -> Lut3D:
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise FormatError("not UTF-8 text", offset=exc.start) from None
    title = ""
    size = None
    dmin = [0.0, 0.0, 0.0]
    dmax = [1.0, 1.0, 1.0]
    rows: list[tuple[str, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _ROW.match(line)
        if m:
            if size is None:
                raise FormatError("data row before LUT_3D_SIZE", line=lineno)
            rows.append((m.group(1), m.group(2), m.group(3)))
            continue
        if rows:
            raise FormatError("keyword after data rows", line=lineno)
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "TITLE":
            title = rest.strip('"')
        elif key == "LUT_3D_SIZE":
            try:
                size = int(rest)
            except ValueError:
                raise FormatError("bad LUT_3D_SIZE", line=lineno) from None
            if not 2 <= size <= MAX_SIZE:
                raise FormatError(f"LUT_3D_SIZE must be in [2, {MAX_SIZE}]", line=lineno)
        elif key in ("DOMAIN_MIN", "DOMAIN_MAX"):
            vals = _floats(rest.split(), lineno)
            if len(vals) != 3:
                raise FormatError(f"{key} needs 3 values", line=lineno)
            (dmin if key == "DOMAIN_MIN" else dmax)[:] = vals
        elif key == "LUT_3D_INPUT_RANGE":
            vals = _floats(rest.split(), lineno)
            if len(vals) != 2:
                raise FormatError(f"{key} needs 2 values", line=lineno)
            dmin[:] = [vals[0]] * 3
            dmax[:] = [vals[1]] * 3
        elif key == "LUT_1D_SIZE":
            raise FormatError("1D LUTs are not supported", line=lineno)
        elif key.isupper() and key.replace("_", "").isalnum():
            continue  # vendor keyword
        else:
            raise FormatError(f"unrecognised line {line[:40]!r}", line=lineno)
    if size is None:
        raise FormatError("missing LUT_3D_SIZE")
    if len(rows) != size ** 3:
        raise FormatError(f"expected {size ** 3} data rows, found {len(rows)}")
    if any(lo >= hi for lo, hi in zip(dmin, dmax)):
        raise FormatError("DOMAIN_MIN must be below DOMAIN_MAX")
    vals = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise FormatError("non-finite value in data rows")
    # row n = r + g*N + b*N^2
    table = vals.reshape(size, size, size, 3).transpose(3, 2, 1, 0)
    return Lut3D(np.ascontiguousarray(table, dtype=np.float32), title=title,
                 domain_min=tuple(dmin), domain_max=tuple(dmax))


def encode_cube(lut: Lut3D, title: str | None = None) -> bytes:
    n = lut.size
    out = []
    title = lut.title if title is None else title
    if title:
        out.append(f'TITLE "{title}"')
    out.append(f"LUT_3D_SIZE {n}")
    if tuple(lut.domain_min) != (0.0, 0.0, 0.0) or tuple(lut.domain_max) != (1.0, 1.0, 1.0):
        out.append("DOMAIN_MIN " + " ".join(f"{v:.6f}" for v in lut.domain_min))
        out.append("DOMAIN_MAX " + " ".join(f"{v:.6f}" for v in lut.domain_max))
    rows = np.asarray(lut.table, dtype=np.float64).transpose(3, 2, 1, 0).reshape(-1, 3)
    out.extend(f"{r:.6f} {g:.6f} {b:.6f}" for r, g, b in rows)
    return ("\n".join(out) + "\n").encode()


def read_cube(path) -> Lut3D:
    return parse_cube(_read(path))


def write_cube(path, lut: Lut3D, title: str | None = None) -> None:
    Path(path).write_bytes(encode_cube(lut, title))


# -- 4D LUT binary --------------------------------------------------------

def lut4d_payload_bytes(size: int, bins: int) -> int:
    return 3 * bins * size ** 3 * 4


def parse_lut4d(data: bytes) -> Lut4D:
    if len(data) < 8 or data[:8] != LUT4D_MAGIC:
        if len(data) < 8 and LUT4D_MAGIC.startswith(data):
            raise TruncatedError("file shorter than signature", offset=len(data))
        raise BadMagicError("not a 4D LUT file", offset=0)
    if len(data) < _LUT4D_HEADER.size:
        raise TruncatedError("header truncated", offset=len(data))
    _, version, size, bins, channels = _LUT4D_HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if not 2 <= size <= MAX_SIZE:
        raise FormatError(f"lattice size {size} outside [2, {MAX_SIZE}]", offset=12)
    if not 1 <= bins <= MAX_BINS:
        raise FormatError(f"context bins {bins} outside [1, {MAX_BINS}]", offset=16)
    if channels != 3:
        raise FormatError(f"expected 3 channels, got {channels}", offset=20)
    need = lut4d_payload_bytes(size, bins)
    have = len(data) - _LUT4D_HEADER.size
    if have < need:
        raise TruncatedError(f"payload needs {need} bytes, found {have}", offset=len(data))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes", offset=_LUT4D_HEADER.size + need)
    table = np.frombuffer(data, dtype="<f4", offset=_LUT4D_HEADER.size).reshape(3, bins, size, size, size)
    if not np.all(np.isfinite(table)):
        raise FormatError("non-finite lattice entry", offset=_LUT4D_HEADER.size)
    return Lut4D(table.astype(np.float32))


def encode_lut4d(lut: Lut4D) -> bytes:
    header = _LUT4D_HEADER.pack(LUT4D_MAGIC, FORMAT_VERSION, lut.size, lut.bins, 3)
    return header + np.ascontiguousarray(lut.table, dtype="<f4").tobytes()


def read_lut4d(path) -> Lut4D:
    return parse_lut4d(_read(path))


def write_lut4d(path, lut: Lut4D) -> None:
    Path(path).write_bytes(encode_lut4d(lut))


# -- weight archive -------------------------------------------------------

def parse_weights(data: bytes) -> WeightArchive:
    if len(data) < 8 or data[:8] != WEIGHTS_MAGIC:
        if len(data) < 8 and WEIGHTS_MAGIC.startswith(data):
            raise TruncatedError("file shorter than signature", offset=len(data))
        raise BadMagicError("not a weight archive", offset=0)
    pos = 8

    def u32():
        nonlocal pos
        if pos + 4 > len(data):
            raise TruncatedError("unexpected end of archive", offset=len(data))
        (v,) = _U32.unpack_from(data, pos)
        pos += 4
        return v

    version = u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    count = u32()
    out = WeightArchive()
    for _ in range(count):
        at = pos
        n = u32()
        if pos + n > len(data):
            raise TruncatedError("tensor name truncated", offset=len(data))
        try:
            name = data[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", offset=pos) from None
        pos += n
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=at)
        rank = u32()
        if rank > MAX_RANK:
            raise FormatError(f"rank {rank} exceeds {MAX_RANK}", offset=pos - 4)
        dims = tuple(u32() for _ in range(rank))
        nbytes = 4 * math.prod(dims)
        if pos + nbytes > len(data):
            raise TruncatedError(f"tensor {name!r} data truncated", offset=len(data))
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} has non-finite values", offset=pos)
        pos += nbytes
        out[name] = arr.astype(np.float32)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    return out


def encode_weights(archive) -> bytes:
    parts = [WEIGHTS_MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(archive))]
    for name, arr in archive.items():
        a = np.array(arr, dtype="<f4", order="C")  # keeps rank 0
        if not np.all(np.isfinite(a)):
            raise DataError(f"tensor {name!r} has non-finite values")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(a.ndim)]
        parts += [_U32.pack(d) for d in a.shape]
        parts.append(a.tobytes())
    return b"".join(parts)


def read_weights(path) -> WeightArchive:
    return parse_weights(_read(path))


def write_weights(path, archive) -> None:
    Path(path).write_bytes(encode_weights(archive))


# -- bank and alpha files -------------------------------------------------

def read_bank(path) -> BasisLutBank:
    """A bank is a weight archive holding one ``bases`` tensor ``(N,3,C,D,D,D)``."""
    arch = read_weights(path)
    if "bases" not in arch:
        raise FormatError(f"{path}: archive has no 'bases' tensor")
    try:
        return BasisLutBank(arch["bases"])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_bank(path, bank: BasisLutBank) -> None:
    write_weights(path, {"bases": bank.bases})


def read_alpha(path) -> np.ndarray:
    """Whitespace- or comma-separated floats."""
    text = _read(path).decode("utf-8", errors="replace")
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise FormatError(f"{path}: alpha file must contain numbers") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise FormatError(f"{path}: alpha file is empty or non-finite")
    return np.array(vals)


def write_alpha(path, alpha) -> None:
    Path(path).write_text("\n".join(repr(float(a)) for a in np.ravel(alpha)) + "\n")
