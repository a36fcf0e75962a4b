"""Binary tensor container and image-sequence ingestion.

Container layout::

    SCITEN1\\n
    dtype=<f32|f64|u8> dims=<d0,d1,...> order=row-major\\n
    <raw little-endian data>
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"SCITEN1\n"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class TensorFormatError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    key = arr.dtype.newbyteorder("=")
    if key not in _CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; expected float32, float64 or uint8")
    return _CODES[key]


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    dims = ",".join(str(d) for d in arr.shape)
    header = f"dtype={code} dims={dims} order=row-major\n".encode("ascii")
    data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes(order="C")
    return MAGIC + header + data


def decode_tensor(buf: bytes) -> np.ndarray:
    if not buf.startswith(MAGIC):
        raise TensorFormatError("missing SCITEN1 magic")
    end = buf.find(b"\n", len(MAGIC))
    if end < 0:
        raise TensorFormatError("truncated header")
    header = buf[len(MAGIC):end].decode("ascii")
    fields = dict(item.split("=", 1) for item in header.split())
    try:
        dtype = _DTYPES[fields["dtype"]]
        dims = tuple(int(d) for d in fields["dims"].split(",") if d)
        order = fields["order"]
    except (KeyError, ValueError) as exc:
        raise TensorFormatError(f"malformed header {header!r}") from exc
    if order != "row-major":
        raise TensorFormatError(f"unsupported order {order!r}")
    payload = buf[end + 1:]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise TensorFormatError(f"payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path, arr) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensor(arr))
    os.replace(tmp, path)


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def read_gray_frame(path) -> np.ndarray:
    """Read one frame as uint8 luma (ITU-R 601 weights for colour input)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            im = im.convert("RGB").convert("L")
        else:
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def load_frame_dir(directory) -> np.ndarray:
    """Load a directory of frames in lexicographic order as a (B, H, W) float64 block in [0, 1]."""
    frames = list_frames(directory)
    if not frames:
        raise FileNotFoundError(f"no image frames in {directory}")
    stack = [read_gray_frame(p) for p in frames]
    shapes = {f.shape for f in stack}
    if len(shapes) != 1:
        raise ValueError(f"frames in {directory} have differing shapes {sorted(shapes)}")
    return np.stack(stack).astype(np.float64) / 255.0


def save_frame_dir(directory, frames) -> None:
    """Write a (B, H, W) block in [0, 1] as 8-bit grayscale PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    for i, frame in enumerate(frames):
        img = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img, mode="L").save(directory / f"{i:05d}.png")


def load_video(path) -> np.ndarray:
    """Load a video block from a tensor container file or a frame directory."""
    path = Path(path)
    if path.is_dir():
        return load_frame_dir(path)
    arr = load_tensor(path)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr
