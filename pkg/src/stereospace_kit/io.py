"""Readers and writers for PPM/PGM images, PFM disparities, raw STSP tensors
and key=value camera files."""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, RigidPose

STSP_MAGIC = b"STSP"
STSP_VERSION = 1


def _read_header_tokens(buf, count, pos=0):
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def read_ppm(path):
    """Read a binary P6 (RGB) or P5 (gray) 8-bit image into [0, 1] float32."""
    buf = Path(path).read_bytes()
    tokens, pos = _read_header_tokens(buf, 4)
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    size = w * h * channels
    if len(buf) - pos < size:
        raise FormatError(f"{path}: truncated raster")
    raster = np.frombuffer(buf, dtype=np.uint8, count=size, offset=pos)
    img = raster.reshape(h, w, channels).astype(np.float32) / np.float32(255.0)
    return img if channels == 3 else img[..., 0]


def write_ppm(path, image):
    """Write P6 for 3-channel input, P5 for single-channel; values clamp to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 3:
        header = b"P6\n%d %d\n255\n" % (q.shape[1], q.shape[0])
    elif q.ndim == 2:
        header = b"P5\n%d %d\n255\n" % (q.shape[1], q.shape[0])
    else:
        raise FormatError(f"cannot write array of shape {img.shape} as PPM")
    Path(path).write_bytes(header + q.tobytes())


def read_pfm(path):
    """Read a PFM file (``Pf`` gray or ``PF`` color) top row first."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"Pf":
            channels = 1
        elif magic == b"PF":
            channels = 3
        else:
            raise FormatError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(f.read(), dtype=endian + "f4")
    if data.size < width * height * channels:
        raise FormatError(f"{path}: truncated raster")
    data = data[: width * height * channels].astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    # PFM stores the bottom row first
    return np.flipud(data.reshape(shape)).copy()


def write_pfm(path, array):
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise FormatError(f"cannot write array of shape {arr.shape} as PFM")
    header = magic + b"\n%d %d\n-1.0\n" % (arr.shape[1], arr.shape[0])
    Path(path).write_bytes(header + np.flipud(arr).astype("<f4").tobytes())


def write_stsp(path, tensor):
    """Raw little-endian float32 tensor with a ``STSP`` header."""
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    header = STSP_MAGIC + struct.pack("<II", STSP_VERSION, arr.ndim)
    header += struct.pack("<%dI" % arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_stsp(path):
    buf = Path(path).read_bytes()
    if buf[:4] != STSP_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != STSP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    shape = struct.unpack_from("<%dI" % ndim, buf, 12)
    offset = 12 + 4 * ndim
    count = int(np.prod(shape)) if shape else 1
    if len(buf) - offset < 4 * count:
        raise FormatError(f"{path}: truncated tensor")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)


def read_image(path):
    """Image by extension: PPM/PGM, PFM, or STSP (channel-major ``(C, H, W)``)."""
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        return read_ppm(path)
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".stsp":
        t = read_stsp(path)
        if t.ndim == 3:
            t = t.transpose(1, 2, 0)
            return t[..., 0] if t.shape[2] == 1 else t
        return t
    raise FormatError(f"{path}: unknown image format")


def read_disparity(path):
    arr = read_image(path)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise FormatError(f"{path}: disparity must be single-channel")
        arr = arr[..., 0]
    return arr


def write_image(path, image):
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        write_ppm(path, image)
    elif suffix == ".pfm":
        write_pfm(path, image)
    elif suffix == ".stsp":
        arr = np.asarray(image)
        write_stsp(path, arr.transpose(2, 0, 1) if arr.ndim == 3 else arr)
    else:
        raise FormatError(f"{path}: unknown image format")


_ROT_KEYS = [f"r{a}{b}" for a in range(3) for b in range(3)]
_T_KEYS = ["tx", "ty", "tz"]


def read_camera(path):
    """Parse a camera file into ``(CameraIntrinsics, RigidPose, baseline_m or None)``.

    Keys: ``fx fy cx cy width height r00..r22 tx ty tz [baseline_m]``;
    blank lines and ``#`` comments are ignored.
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    try:
        intr = CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
        )
        rot = np.array([float(values[k]) for k in _ROT_KEYS]).reshape(3, 3)
        t = np.array([float(values[k]) for k in _T_KEYS])
    except KeyError as exc:
        raise FormatError(f"{path}: missing key {exc.args[0]}") from None
    baseline = float(values["baseline_m"]) if "baseline_m" in values else None
    return intr, RigidPose(rot, t), baseline


def write_camera(path, intr, pose, baseline_m=None):
    lines = [
        f"fx={intr.fx!r}",
        f"fy={intr.fy!r}",
        f"cx={intr.cx!r}",
        f"cy={intr.cy!r}",
        f"width={intr.width}",
        f"height={intr.height}",
    ]
    lines += [f"{k}={float(v)!r}" for k, v in zip(_ROT_KEYS, pose.rotation.reshape(-1))]
    lines += [f"{k}={float(v)!r}" for k, v in zip(_T_KEYS, pose.translation)]
    if baseline_m is not None:
        lines.append(f"baseline_m={float(baseline_m)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
