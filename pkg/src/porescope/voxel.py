"""Volume ingestion, binarisation, pore-space cleaning and porosity.

Arrays are indexed ``[x, y, z]`` with z the flow axis. On disk, raw volumes
are stored z-major (x fastest, then y, then z), one byte per voxel.
"""

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyPoreSpace,
    InconsistentSlices,
    InputError,
    MissingSidecar,
    SectionTooThin,
    SizeMismatch,
)

DEFAULT_THRESHOLD = 34
DEFAULT_VOXEL_SIZE_UM = 6.25
DEFAULT_MIN_COMPONENT_VOXELS = 64


@dataclass(frozen=True)
class VoxelGrid:
    """8-bit grayscale volume with isotropic voxel size in micrometres."""

    data: np.ndarray
    voxel_size: float = DEFAULT_VOXEL_SIZE_UM

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise InputError(f"volume must be 3D with non-empty axes, got {self.data.shape}")
        if not self.voxel_size > 0:
            raise InputError("voxel_size must be positive")

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)


@dataclass(frozen=True)
class BinaryPoreMask:
    """Boolean pore-space mask (True = void/fluid)."""

    pore: np.ndarray
    voxel_size: float = DEFAULT_VOXEL_SIZE_UM

    @property
    def dims(self):
        return tuple(int(n) for n in self.pore.shape)

    @property
    def porosity(self):
        return float(np.count_nonzero(self.pore)) / self.pore.size

    def to_grid(self, pore_value=0, solid_value=255):
        """Render the mask back to a grayscale grid."""
        data = np.where(self.pore, pore_value, solid_value).astype(np.uint8)
        return VoxelGrid(data, self.voxel_size)


@dataclass(frozen=True)
class CleanReport:
    components_removed: int
    voxels_removed: int


@dataclass(frozen=True)
class Section:
    index: int
    z_start: int  # first slice index
    z_stop: int  # one past the last slice index
    z_min_um: float
    z_max_um: float
    porosity: float
    pore_voxels: int


# ---------------------------------------------------------------- ingestion


def _read_sidecar(path):
    sidecar = Path(path).with_suffix(".json")
    if not sidecar.exists():
        raise MissingSidecar(f"sidecar {sidecar} not found")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"sidecar {sidecar} is not valid JSON: {exc}") from None
    if not isinstance(meta, dict):
        raise InputError(f"sidecar {sidecar} must hold a JSON object")
    dims = meta.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(n, int) and n >= 1 for n in dims)
    ):
        raise InputError(f"sidecar field 'dims' must be three positive integers, got {dims!r}")
    voxel_size = meta.get("voxel_size_um")
    if not isinstance(voxel_size, (int, float)) or not voxel_size > 0:
        raise InputError(f"sidecar field 'voxel_size_um' must be a positive number, got {voxel_size!r}")
    return tuple(dims), float(voxel_size)


def read_raw(path):
    path = Path(path)
    (nx, ny, nz), voxel_size = _read_sidecar(path)
    buf = path.read_bytes()
    if len(buf) != nx * ny * nz:
        raise SizeMismatch(
            f"{path.name}: {len(buf)} bytes but dims {nx}x{ny}x{nz} need {nx * ny * nz}"
        )
    data = np.frombuffer(buf, dtype=np.uint8).reshape(nz, ny, nx).transpose(2, 1, 0)
    return VoxelGrid(np.ascontiguousarray(data), voxel_size)


def write_raw(grid, path, dtype="<u1"):
    """Write ``grid`` (a VoxelGrid or anything with ``data``/``voxel_size``)."""
    path = Path(path)
    data = np.asarray(grid.data)
    path.write_bytes(data.transpose(2, 1, 0).astype(dtype).tobytes())
    meta = {"dims": list(data.shape), "voxel_size_um": grid.voxel_size}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


_PGM_NAME = re.compile(r"slice_(\d+)\.pgm$")


def _parse_pgm(buf, name):
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InconsistentSlices(f"{name}: truncated PGM header")
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise InconsistentSlices(f"{name}: only binary P5 PGM is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InconsistentSlices(f"{name}: maxval {maxval} unsupported, expected 255")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).T  # [x, y]


def read_pgm_stack(directory, voxel_size=DEFAULT_VOXEL_SIZE_UM):
    directory = Path(directory)
    indexed = []
    for p in directory.iterdir():
        m = _PGM_NAME.match(p.name)
        if m:
            indexed.append((int(m.group(1)), p))
    if not indexed:
        raise InconsistentSlices(f"no slice_NNNN.pgm files in {directory}")
    indexed.sort()
    idx = [i for i, _ in indexed]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise InconsistentSlices(f"slice indices in {directory} are not contiguous")
    slices = []
    for _, p in indexed:
        try:
            slices.append(_parse_pgm(p.read_bytes(), p.name))
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise InconsistentSlices(f"{p.name}: {exc}") from None
    shape = slices[0].shape
    for (_, p), s in zip(indexed, slices):
        if s.shape != shape:
            raise InconsistentSlices(f"{p.name} is {s.shape}, expected {shape}")
    return VoxelGrid(np.ascontiguousarray(np.stack(slices, axis=2)), voxel_size)


def write_pgm_stack(grid, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = grid.data.shape
    for k in range(nz):
        header = f"P5\n{nx} {ny}\n255\n".encode()
        body = np.ascontiguousarray(grid.data[:, :, k].T).astype(np.uint8).tobytes()
        (directory / f"slice_{k:04d}.pgm").write_bytes(header + body)


def load_volume(path, format=None, voxel_size=DEFAULT_VOXEL_SIZE_UM):
    """Load a volume from ``<name>.raw`` + sidecar or a PGM slice directory.

    ``format`` is ``"raw"`` or ``"pgm"``; when omitted it is inferred from
    the path (directories are PGM stacks). ``voxel_size`` only applies to
    PGM stacks, raw volumes carry theirs in the sidecar.
    """
    path = Path(path)
    if format is None:
        format = "pgm" if path.is_dir() else "raw"
    if format == "raw":
        if not path.exists():
            raise InputError(f"volume {path} not found")
        return read_raw(path)
    if format in ("pgm", "pgm-stack"):
        if not path.is_dir():
            raise InputError(f"PGM stack directory {path} not found")
        return read_pgm_stack(path, voxel_size)
    raise InputError(f"unknown volume format {format!r}")


# ------------------------------------------------------------- processing


def binarise(grid, threshold=DEFAULT_THRESHOLD, dark_is_pore=True):
    """Threshold a grayscale grid into a pore mask.

    With ``dark_is_pore`` a voxel is pore iff its value is strictly below
    ``threshold``; otherwise the complement is returned.
    """
    if not 0 <= threshold <= 255:
        raise InputError("threshold must lie in [0, 255]")
    pore = grid.data < threshold
    if not dark_is_pore:
        pore = ~pore
    return BinaryPoreMask(pore, grid.voxel_size)


def _structure(connectivity):
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise InputError("connectivity must be 6 or 26")


def clean_pore_space(mask, min_component_voxels=DEFAULT_MIN_COMPONENT_VOXELS, connectivity=26):
    """Drop small pore islands and components that do not span z.

    A component survives when it has at least ``min_component_voxels``
    voxels and touches both the inlet (z=0) and outlet (z=nz-1) slices.

    Returns
    -------
    (BinaryPoreMask, CleanReport)
    """
    if min_component_voxels < 0:
        raise InputError("min_component_voxels must be >= 0")
    labels, n = ndimage.label(mask.pore, structure=_structure(connectivity))
    if n == 0:
        raise EmptyPoreSpace("mask contains no pore voxels")
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    inlet = np.zeros(n + 1, dtype=bool)
    outlet = np.zeros(n + 1, dtype=bool)
    inlet[np.unique(labels[:, :, 0])] = True
    outlet[np.unique(labels[:, :, -1])] = True
    keep = inlet & outlet & (sizes >= min_component_voxels)
    keep[0] = False
    if not keep.any():
        raise EmptyPoreSpace("no pore component connects the inlet and outlet faces")
    pore = keep[labels]
    removed = (~keep[1:]).sum()
    report = CleanReport(int(removed), int(np.count_nonzero(mask.pore) - np.count_nonzero(pore)))
    return BinaryPoreMask(pore, mask.voxel_size), report


def section_bounds(nz, voxel_size, section_length):
    """Slice-index bounds ``[(start, stop), ...]`` for sectioning along z.

    The axis is split into ``floor(Lz / section_length)`` sections (at least
    one); the last section absorbs the remainder.
    """
    if section_length < voxel_size:
        raise SectionTooThin(
            f"section length {section_length} um is below the voxel size {voxel_size} um"
        )
    n = max(1, int(np.floor(nz * voxel_size / section_length + 1e-9)))
    starts = [int(np.floor(i * section_length / voxel_size + 1e-9)) for i in range(n)]
    stops = starts[1:] + [nz]
    return list(zip(starts, stops))


def sectional_porosity(mask, section_length):
    vs = mask.voxel_size
    per_slice = np.count_nonzero(mask.pore, axis=(0, 1))
    plane = mask.pore.shape[0] * mask.pore.shape[1]
    out = []
    for i, (a, b) in enumerate(section_bounds(mask.pore.shape[2], vs, section_length)):
        count = int(per_slice[a:b].sum())
        out.append(Section(i, a, b, a * vs, b * vs, count / (plane * (b - a)), count))
    return out


def write_porosity_csv(sections, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section_index", "z_min_um", "z_max_um", "porosity"])
        for s in sections:
            w.writerow([s.index, f"{s.z_min_um:.6g}", f"{s.z_max_um:.6g}", f"{s.porosity:.6f}"])
