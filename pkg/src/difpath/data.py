"""Synthetic slides, field-of-view patch extraction, and file formats.

Images inside the package are float arrays ``(H, W, 3)`` in [-1, 1]; slides
are kept as uint8 rasters. Every writer goes through ``atomic_write`` (temp
file in the target directory, then ``os.replace``).
"""
from dataclasses import dataclass, field
import json
import logging
import math
import os
from pathlib import Path
import struct
import tempfile

import numpy as np

from . import kernels
from .errors import (ContractError, ExtractionError, FormatError, MissingFileError,
                     ParameterError)
from .numerics import RngStream, gaussian

log = logging.getLogger(__name__)

N_CLASSES = 5
SLIDE_MPP = 0.875
SLIDE_EXTENT = 2048
BACKGROUND_VAR = 1e-3


# ---------------------------------------------------------------------------
# field of view arithmetic
# ---------------------------------------------------------------------------

def _positive(name, v):
    if not (isinstance(v, (int, float, np.integer, np.floating)) and math.isfinite(v) and v > 0):
        raise ParameterError(f"{name} must be a positive number, got {v!r}")


def fov_of(patch_size_px, resolution_mpp):
    """Physical field of view in microns: pixels times microns per pixel."""
    _positive("patch_size_px", patch_size_px)
    _positive("resolution_mpp", resolution_mpp)
    return patch_size_px * resolution_mpp


def pixel_extent_of(fov_microns, mpp):
    """Nearest whole-pixel extent covering ``fov_microns`` at ``mpp``, plus the remainder in pixels."""
    _positive("fov_microns", fov_microns)
    _positive("mpp", mpp)
    q = fov_microns / mpp
    n = int(math.floor(q + 0.5))
    return n, q - n


@dataclass(frozen=True)
class PatchSpec:
    fov_microns: float
    patch_size_px: int
    resolution_mpp: float

    def __post_init__(self):
        _positive("fov_microns", self.fov_microns)
        _positive("patch_size_px", self.patch_size_px)
        _positive("resolution_mpp", self.resolution_mpp)
        if int(self.patch_size_px) != self.patch_size_px:
            raise ParameterError("patch_size_px must be an integer")
        expect = self.patch_size_px * self.resolution_mpp
        if abs(expect - self.fov_microns) > 1e-9 * max(1.0, abs(expect)):
            raise ParameterError(
                f"fov {self.fov_microns} != {self.patch_size_px} px x {self.resolution_mpp} mpp")

    @classmethod
    def from_size_mpp(cls, patch_size_px, resolution_mpp):
        return cls(fov_of(patch_size_px, resolution_mpp), int(patch_size_px), resolution_mpp)

    @classmethod
    def from_fov(cls, fov_microns, patch_size_px):
        _positive("patch_size_px", patch_size_px)
        return cls(fov_microns, int(patch_size_px), fov_microns / patch_size_px)


# ---------------------------------------------------------------------------
# synthetic slides
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassTexture:
    name: str
    background: tuple
    density: float          # disk centers per slide pixel^2
    radius: tuple           # uniform radius range, slide pixels
    palette: tuple          # three RGB colors in [0, 1]
    palette_p: tuple
    field_amp: float = 0.03
    noise: float = 0.025


CLASS_TEXTURES = (
    ClassTexture("normal", (0.95, 0.86, 0.91), 7e-4, (5.0, 9.0),
                 ((0.30, 0.18, 0.50), (0.62, 0.35, 0.62), (0.88, 0.62, 0.78)), (0.6, 0.25, 0.15)),
    ClassTexture("hyperplastic", (0.90, 0.70, 0.80), 1.3e-3, (6.0, 12.0),
                 ((0.45, 0.20, 0.55), (0.78, 0.45, 0.68), (0.96, 0.80, 0.88)), (0.3, 0.4, 0.3)),
    ClassTexture("sessile_serrated", (0.84, 0.80, 0.90), 4e-4, (14.0, 28.0),
                 ((0.55, 0.32, 0.68), (0.80, 0.58, 0.80), (0.42, 0.30, 0.50)), (0.4, 0.4, 0.2)),
    ClassTexture("tubular", (0.93, 0.76, 0.76), 2.6e-3, (4.0, 7.0),
                 ((0.22, 0.10, 0.38), (0.50, 0.20, 0.48), (0.82, 0.50, 0.62)), (0.5, 0.3, 0.2)),
    ClassTexture("villous", (0.78, 0.62, 0.76), 2e-4, (25.0, 50.0),
                 ((0.72, 0.42, 0.66), (0.50, 0.26, 0.56), (0.94, 0.74, 0.86)), (0.4, 0.3, 0.3)),
)


def _jitter(tex, rng):
    """Per-slide draw of the texture parameters around the class table (+-5%)."""
    u = rng.uniform(3)
    f_den, f_rad, f_bg = 1.0 + 0.1 * (u - 0.5)
    bg = tuple(float(np.clip(c * (1.0 + 0.04 * (f_bg - 1.0)), 0, 1)) for c in tex.background)
    return ClassTexture(tex.name, bg, tex.density * f_den,
                        (tex.radius[0] * f_rad, tex.radius[1] * f_rad), tex.palette, tex.palette_p,
                        tex.field_amp, tex.noise)


def expected_mean_color(tex):
    """Mean RGB of a Boolean disk model: the top disk's color where covered, background elsewhere."""
    r0, r1 = tex.radius
    er2 = (r0 * r0 + r0 * r1 + r1 * r1) / 3.0
    cover = 1.0 - math.exp(-tex.density * math.pi * er2)
    ink = np.asarray(tex.palette_p) @ np.asarray(tex.palette)
    return (1.0 - cover) * np.asarray(tex.background) + cover * ink


@dataclass
class SyntheticSlide:
    class_id: int
    seed: int
    mpp: float
    raster: np.ndarray      # uint8 (extent, extent, 3)
    texture: ClassTexture = field(default=None)

    @property
    def extent(self):
        return self.raster.shape[0]


def _bilinear_upsample(grid, H, W):
    gh, gw = grid.shape
    ys = (np.arange(H) + 0.5) * (gh - 1) / H
    xs = (np.arange(W) + 0.5) * (gw - 1) / W
    y0 = np.minimum(ys.astype(int), gh - 2)
    x0 = np.minimum(xs.astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (1 - fy) * ((1 - fx) * g00 + fx * g01) + fy * ((1 - fx) * g10 + fx * g11)


def generate_slide(class_id, seed, extent=SLIDE_EXTENT, mpp=SLIDE_MPP):
    """Deterministic RGB raster for ``(class_id, seed)``."""
    if not 0 <= int(class_id) < N_CLASSES:
        raise ParameterError(f"class id must lie in [0, {N_CLASSES}), got {class_id}")
    if int(extent) < 16:
        raise ParameterError("slide extent must be >= 16")
    _positive("mpp", mpp)
    class_id, extent = int(class_id), int(extent)
    rng = RngStream(int(seed), 0x534C49 + class_id)
    tex = _jitter(CLASS_TEXTURES[class_id], rng.child(0))

    img = np.empty((extent, extent, 3))
    img[:] = tex.background
    r0, r1 = tex.radius
    side = extent + 2 * r1
    n = int(round(tex.density * side * side))
    geo = rng.child(1)
    cx = geo.uniform(n) * side - r1
    cy = geo.uniform(n) * side - r1
    r = r0 + (r1 - r0) * geo.uniform(n)
    pick = np.searchsorted(np.cumsum(tex.palette_p), geo.uniform(n), side="right")
    colors = np.asarray(tex.palette)[np.minimum(pick, 2)]
    kernels.paint_disks(img, cx, cy, r, colors)

    cells = max(2, extent // 128 + 2)
    smooth = _bilinear_upsample(gaussian(rng.child(2), (cells, cells)), extent, extent)
    img += tex.field_amp * smooth[:, :, None]
    img += tex.noise * gaussian(rng.child(3), img.shape)
    raster = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return SyntheticSlide(class_id, int(seed), float(mpp), raster, tex)


# ---------------------------------------------------------------------------
# resizing and extraction
# ---------------------------------------------------------------------------

def resize_matrix(n_in, n_out):
    """Bilinear interpolation matrix (n_out, n_in); widens the triangle when shrinking."""
    scale = n_in / n_out
    support = max(1.0, scale)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.arange(n_in)
    w = np.maximum(0.0, 1.0 - np.abs(src[None, :] - centers[:, None]) / support)
    return w / w.sum(axis=1, keepdims=True)


def resize(images, size):
    """Resize ``(H, W, C)`` or ``(B, H, W, C)`` to ``size`` (int or (h, w))."""
    h, w = (size, size) if np.isscalar(size) else size
    x = np.asarray(images, dtype=np.float64)
    if x.shape[-3:-1] == (h, w):
        return x.copy()
    mh = resize_matrix(x.shape[-3], h)
    mw = resize_matrix(x.shape[-2], w)
    return np.einsum("ih,...hwc,jw->...ijc", mh, x, mw, optimize=True)


def to_unit(raster):
    """uint8 -> float in [-1, 1]."""
    return np.asarray(raster, dtype=np.float64) / 127.5 - 1.0


def to_uint8(image):
    return np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


@dataclass
class PatchBatch:
    images: np.ndarray      # (n, P, P, 3) in [-1, 1]
    positions: np.ndarray   # (n, 2) top-left (row, col) in slide pixels
    crop_px: int
    dropped: int = 0


def extract_patches(slide, spec, stride=None, out_size_px=None):
    """Tile ``slide`` into FOV crops and resize each to ``out_size_px`` (default ``spec.patch_size_px``).

    ``stride`` is in slide pixels and defaults to the crop extent. Patches
    whose pixel variance (in [-1, 1] units) falls below 1e-3 are dropped.
    """
    out = spec.patch_size_px if out_size_px is None else int(out_size_px)
    if slide.mpp > spec.resolution_mpp:
        raise ExtractionError(
            f"slide mpp {slide.mpp} is coarser than requested patch mpp {spec.resolution_mpp}")
    crop, _ = pixel_extent_of(spec.fov_microns, slide.mpp)
    E = slide.extent
    if crop > E:
        raise ExtractionError(f"FOV {spec.fov_microns} um needs {crop} px, slide has {E}")
    stride = crop if stride is None else int(stride)
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    starts = range(0, E - crop + 1, stride)
    pos = np.array([(i, j) for i in starts for j in starts], dtype=np.int64)
    mh = resize_matrix(crop, out)
    keep_img, keep_pos = [], []
    for i, j in pos:
        patch = to_unit(slide.raster[i:i + crop, j:j + crop])
        if crop != out:
            patch = np.einsum("ih,hwc,jw->ijc", mh, patch, mh, optimize=True)
        if patch.var() < BACKGROUND_VAR:
            continue
        keep_img.append(patch)
        keep_pos.append((i, j))
    images = np.array(keep_img).reshape(-1, out, out, 3)
    return PatchBatch(images, np.array(keep_pos, dtype=np.int64).reshape(-1, 2), crop,
                      len(pos) - len(keep_img))


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------

def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _read(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFileError(f"no such file: {path}") from None


# ---------------------------------------------------------------------------
# PPM (P6)
# ---------------------------------------------------------------------------

def encode_ppm(image):
    """Bytes of a binary PPM; float images are taken as [-1, 1], uint8 as-is."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"PPM needs (H, W, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    H, W = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (W, H) + np.ascontiguousarray(arr).tobytes()


def save_ppm(path, image):
    atomic_write(path, encode_ppm(image))


def decode_ppm(buf, path=None, raw=False):
    pos = 0
    if buf[:2] != b"P6":
        raise FormatError("bad PPM magic", offset=0, path=path)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header", offset=pos, path=path)
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("malformed PPM header", offset=pos, path=path)
    pos += 1
    W, H, maxval = fields
    if W < 1 or H < 1 or not 0 < maxval < 256:
        raise FormatError(f"unsupported PPM geometry {W}x{H} maxval {maxval}", offset=pos, path=path)
    need = W * H * 3
    if len(buf) - pos < need:
        raise FormatError(f"truncated PPM payload: need {need} bytes", offset=len(buf), path=path)
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(H, W, 3)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return arr.copy() if raw else to_unit(arr)


def load_ppm(path, raw=False):
    """Image in [-1, 1] (or the uint8 raster with ``raw=True``)."""
    return decode_ppm(_read(path), path=path, raw=raw)


# ---------------------------------------------------------------------------
# DIFC checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"DIFC"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8"), 4: np.dtype("u1"),
           5: np.dtype("<i4")}
_TAGS = {v.newbyteorder("<") if v.itemsize > 1 else v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    tensors: dict
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(ckpt):
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HHI", VERSION, 0, len(meta)), meta,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        a = np.asarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.itemsize > 1 else a.dtype
        if dt not in _TAGS:
            raise ContractError(f"unsupported dtype {a.dtype} for tensor {name!r}")
        nb = name.encode()
        parts.append(struct.pack("<HBB", len(nb), _TAGS[dt], a.ndim) + nb)
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype=dt).tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt):
    atomic_write(path, encode_checkpoint(ckpt))


def decode_checkpoint(buf, path=None):
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos, path=path)
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0, path=path)
    version, _, mlen = struct.unpack("<HHI", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    at = pos
    try:
        meta = json.loads(bytes(take(mlen, "metadata")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("metadata is not valid JSON", offset=at, path=path) from None
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        at = pos
        nlen, tag, rank = struct.unpack("<HBB", take(4, "tensor header"))
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag}", offset=at + 2, path=path)
        name = bytes(take(nlen, "tensor name")).decode(errors="replace")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents"))
        dt = _DTYPES[tag]
        payload = take(dt.itemsize * int(np.prod(shape, dtype=np.int64)), f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise FormatError("trailing bytes after tensor table", offset=pos, path=path)
    return Checkpoint(tensors, meta)


def load_checkpoint(path):
    return decode_checkpoint(_read(path), path=path)


# ---------------------------------------------------------------------------
# datasets on disk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetPreset:
    name: str
    fov_microns: float
    patch_px: int = 32
    slides_per_class: int = 5
    extent: int = SLIDE_EXTENT
    mpp: float = SLIDE_MPP
    seed: int = 0
    train_fraction: float = 0.8


PRESETS = {
    "PKGH-toy-224": DatasetPreset("PKGH-toy-224", 224.0),
    "PKGH-toy-336": DatasetPreset("PKGH-toy-336", 336.0),
}


def slide_seed(seed, class_id, index):
    return int(RngStream(int(seed), 0x5EED).child(class_id * 100003 + index).raw(1)[0] >> 1)


def split_slides(n_slides, train_fraction=0.8):
    """Indices of train and test slides; at least one slide on each side when n >= 2."""
    n_train = min(max(int(math.ceil(train_fraction * n_slides)), 1), max(n_slides - 1, 1))
    return list(range(n_train)), list(range(n_train, n_slides))


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    manifest: dict


def build_dataset(preset, classes=N_CLASSES, slides_per_class=None):
    """Generate slides in memory and return ``{"train": Dataset, "test": Dataset}``."""
    spc = preset.slides_per_class if slides_per_class is None else slides_per_class
    spec = PatchSpec.from_fov(preset.fov_microns, preset.patch_px)
    train_ids, test_ids = split_slides(spc, preset.train_fraction)
    parts = {"train": ([], []), "test": ([], [])}
    for k in range(classes):
        for j in range(spc):
            slide = generate_slide(k, slide_seed(preset.seed, k, j), preset.extent, preset.mpp)
            batch = extract_patches(slide, spec)
            split = "train" if j in train_ids else "test"
            parts[split][0].append(batch.images)
            parts[split][1].append(np.full(len(batch.images), k, dtype=np.int64))
    out = {}
    for split, (imgs, labs) in parts.items():
        images = np.concatenate(imgs) if imgs else np.zeros((0, preset.patch_px, preset.patch_px, 3))
        labels = np.concatenate(labs) if labs else np.zeros(0, dtype=np.int64)
        out[split] = Dataset(images, labels, dataset_manifest(
            classes, preset.mpp, preset.fov_microns, preset.patch_px, len(images), preset.seed,
            split=split, preset=preset.name))
    return out


def dataset_manifest(classes, mpp, fov, patch_px, count, seed, **extra):
    return {"classes": int(classes), "mpp": float(mpp), "fov": float(fov),
            "patch_px": int(patch_px), "count": int(count), "seed": int(seed), **extra}


def save_dataset(root, images, labels, manifest):
    """Write ``root/class_<k>/patch_<i>.ppm`` plus ``root/manifest.json``."""
    root = Path(root)
    counters = {}
    for img, k in zip(images, labels):
        i = counters.get(int(k), 0)
        counters[int(k)] = i + 1
        save_ppm(root / f"class_{int(k)}" / f"patch_{i}.ppm", img)
    for k in range(int(manifest.get("classes", 0))):
        (root / f"class_{k}").mkdir(parents=True, exist_ok=True)
    write_json(root / "manifest.json", {**manifest, "count": int(len(images))})


def _index(name, prefix):
    try:
        return int(name[len(prefix):].split(".")[0])
    except ValueError:
        return None


def load_dataset(root):
    """Read a directory written by ``save_dataset``; images ordered by class then index."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFileError(f"no such dataset directory: {root}")
    manifest = {}
    if (root / "manifest.json").exists():
        try:
            manifest = json.loads((root / "manifest.json").read_text())
        except json.JSONDecodeError as e:
            raise FormatError("manifest is not valid JSON", offset=e.pos,
                              path=root / "manifest.json") from None
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir() and d.name.startswith("class_")
                         and _index(d.name, "class_") is not None),
                        key=lambda d: _index(d.name, "class_"))
    images, labels = [], []
    for d in class_dirs:
        k = _index(d.name, "class_")
        files = sorted((f for f in d.glob("patch_*.ppm") if _index(f.name, "patch_") is not None),
                       key=lambda f: _index(f.name, "patch_"))
        for f in files:
            images.append(load_ppm(f))
            labels.append(k)
    if images:
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise ContractError(f"dataset images have mixed shapes {sorted(shapes)}")
        arr = np.stack(images)
    else:
        p = int(manifest.get("patch_px", 0))
        arr = np.zeros((0, p, p, 3))
    if "classes" not in manifest:
        manifest["classes"] = len(class_dirs)
    return Dataset(arr, np.asarray(labels, dtype=np.int64), manifest)
