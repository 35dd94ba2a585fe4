"""CFD nodal-plane import, voxel interpolation and channel Reynolds numbers.

Nodal CSV files are in SI units (m, m/s, Pa); positions are converted to
micrometres on import so they line up with voxel centres at
``(index + 0.5) * voxel_size``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LinearNDInterpolator, RegularGridInterpolator
from scipy.spatial import cKDTree

from .errors import InputError, InsufficientPlanes, MalformedHeader, NonMonotonePlanes
from .poreseg import equivalent_diameter
from .voxel import section_bounds

NODAL_HEADER = ["x", "y", "z", "u", "v", "w", "p"]
DEFAULT_PLANE_SPACING_UM = 18.75
IDW_NEIGHBOURS = 8
IDW_POWER = 2


@dataclass
class Plane:
    z: float  # um
    xy: np.ndarray  # (n, 2) um
    values: np.ndarray  # (n, 4): u, v, w [m/s], p [Pa]


@dataclass
class FlowField:
    """Sampled planes and, once interpolated, per-voxel velocity/pressure."""

    planes: list
    voxel_size: float
    velocity: np.ndarray = field(default=None)  # (nx, ny, nz, 3)
    pressure: np.ndarray = field(default=None)  # (nx, ny, nz)

    @property
    def speed(self):
        return np.linalg.norm(self.velocity, axis=-1)


def import_nodal_csv(path, voxel_size):
    """Read nodal samples and bucket them into z planes.

    Points whose z lies within ``0.1 * voxel_size`` of the first point of the
    current plane belong to that plane. Files must list planes in increasing
    z, as written plane by plane by the exporter.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != NODAL_HEADER:
        got = ",".join(rows[0]) if rows else "<empty>"
        raise MalformedHeader(f"expected header {','.join(NODAL_HEADER)}, got {got}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if data.size == 0:
        raise InsufficientPlanes(f"{path}: no data rows")
    if data.ndim != 2 or data.shape[1] != 7:
        raise InputError(f"{path}: rows must have 7 columns")
    pos = data[:, :3] * 1e6
    tol = 0.1 * voxel_size
    planes = []
    start = 0
    z0 = pos[0, 2]
    for i in range(1, len(pos) + 1):
        if i == len(pos) or abs(pos[i, 2] - z0) > tol:
            sl = slice(start, i)
            z = float(np.mean(pos[sl, 2]))
            if planes and z <= planes[-1].z:
                raise NonMonotonePlanes(f"plane at z={z:.6g} um follows plane at z={planes[-1].z:.6g} um")
            planes.append(Plane(z, pos[sl, :2].copy(), data[sl, 3:].copy()))
            if i < len(pos):
                start, z0 = i, pos[i, 2]
    return FlowField(planes, voxel_size)


def _regular_grid(xy, tol):
    """Return ``(xs, ys, index)`` if ``xy`` is a full tensor grid, else None."""
    kx = np.round(xy[:, 0] / tol).astype(np.int64)
    ky = np.round(xy[:, 1] / tol).astype(np.int64)
    ux, ix = np.unique(kx, return_inverse=True)
    uy, iy = np.unique(ky, return_inverse=True)
    if len(ux) < 2 or len(uy) < 2 or len(ux) * len(uy) != len(xy):
        return None
    flat = ix * len(uy) + iy
    if len(np.unique(flat)) != len(xy):
        return None
    xs = np.zeros(len(ux))
    ys = np.zeros(len(uy))
    xs[ix] = xy[:, 0]
    ys[iy] = xy[:, 1]
    return xs, ys, flat


def _interp_plane(plane, qx, qy, voxel_size):
    """Values of one plane at the query points ``(qx, qy)`` (flattened)."""
    q = np.stack([qx, qy], axis=1)
    grid = _regular_grid(plane.xy, 1e-6 * voxel_size)
    if grid is not None:
        xs, ys, flat = grid
        vals = np.empty((len(xs) * len(ys), 4))
        vals[flat] = plane.values
        vals = vals.reshape(len(xs), len(ys), 4)
        qc = np.stack([np.clip(qx, xs[0], xs[-1]), np.clip(qy, ys[0], ys[-1])], axis=1)
        return RegularGridInterpolator((xs, ys), vals, method="linear")(qc)
    out = np.full((len(q), 4), np.nan)
    if len(plane.xy) >= 3 and np.linalg.matrix_rank(plane.xy - plane.xy.mean(axis=0)) == 2:
        # scattered samples: piecewise linear on the Delaunay triangulation
        out = LinearNDInterpolator(plane.xy, plane.values)(q)
    miss = np.isnan(out).any(axis=1)
    if miss.any():
        out[miss] = _idw(plane, q[miss], voxel_size)
    return out


def _idw(plane, q, voxel_size):
    # inverse-distance weighting over nearest neighbours, exact on coincident points
    k = min(IDW_NEIGHBOURS, len(plane.xy))
    d, idx = cKDTree(plane.xy).query(q, k=k)
    if k == 1:
        d, idx = d[:, None], idx[:, None]
    hit = d[:, 0] < 1e-9 * voxel_size
    w = 1.0 / np.maximum(d, 1e-300) ** IDW_POWER
    out = np.einsum("nk,nkc->nc", w, plane.values[idx]) / w.sum(axis=1)[:, None]
    out[hit] = plane.values[idx[hit, 0]]
    return out


def interpolate_to_voxels(field, mask):
    """Interpolate the sampled planes onto the voxel centres of ``mask``.

    In-plane interpolation is bilinear on tensor-grid samples and linear on
    a Delaunay triangulation otherwise, with IDW for voxel centres outside
    the sampled hull; between planes it is linear in z, held constant beyond the
    first and last plane. Velocity is zeroed on solid voxels.
    """
    planes = field.planes
    if len(planes) < 2:
        raise InsufficientPlanes(f"need at least 2 planes, got {len(planes)}")
    vs = mask.voxel_size
    zs = np.array([p.z for p in planes])
    if np.any(np.diff(zs) < vs * (1 - 1e-9)):
        raise InputError("plane spacing must be at least one voxel")
    nx, ny, nz = mask.dims
    gx, gy = np.meshgrid((np.arange(nx) + 0.5) * vs, (np.arange(ny) + 0.5) * vs, indexing="ij")
    qx, qy = gx.ravel(), gy.ravel()
    plane_vals = np.stack([_interp_plane(p, qx, qy, vs) for p in planes])  # (P, nx*ny, 4)

    zc = (np.arange(nz) + 0.5) * vs
    hi = np.clip(np.searchsorted(zs, zc, side="right"), 1, len(zs) - 1)
    lo = hi - 1
    t = np.clip((zc - zs[lo]) / (zs[hi] - zs[lo]), 0.0, 1.0)
    vals = (plane_vals[lo] * (1 - t)[:, None, None] + plane_vals[hi] * t[:, None, None])
    vals = vals.reshape(nz, nx, ny, 4).transpose(1, 2, 0, 3)
    velocity = np.ascontiguousarray(vals[..., :3])
    velocity[~mask.pore] = 0.0
    pressure = np.ascontiguousarray(vals[..., 3])
    return FlowField(planes, vs, velocity, pressure)


def export_nodal_csv(field, path, plane_step=1):
    """Write a voxelised field as nodal planes (every ``plane_step`` slices)."""
    vs = field.voxel_size
    nx, ny, nz = field.pressure.shape
    gx, gy = np.meshgrid((np.arange(nx) + 0.5) * vs, (np.arange(ny) + 0.5) * vs, indexing="ij")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODAL_HEADER)
        for k in range(0, nz, plane_step):
            z = (k + 0.5) * vs * 1e-6
            u = field.velocity[:, :, k]
            p = field.pressure[:, :, k]
            for i in range(nx):
                for j in range(ny):
                    w.writerow([repr(float(gx[i, j] * 1e-6)), repr(float(gy[i, j] * 1e-6)), repr(float(z)),
                                repr(float(u[i, j, 0])), repr(float(u[i, j, 1])),
                                repr(float(u[i, j, 2])), repr(float(p[i, j]))])


# -------------------------------------------------------------- channel Re


def hydraulic_diameter(area):
    """Equivalent circular diameter ``sqrt(4 A / pi)``."""
    return equivalent_diameter(area)


def reynolds(velocity, diameter_m, nu):
    """``Re = u D / nu`` with ``u`` in m/s, ``D`` in m and ``nu`` in m^2/s."""
    return np.asarray(velocity) * np.asarray(diameter_m) / nu


@dataclass(frozen=True)
class ChannelSection:
    plane: int
    plane_z_um: float
    label: int
    area_um2: float
    dhyd_um: float
    u_mean: float
    re: float


def channel_re(field, lps, props, nu=None):
    """Per-plane, per-label hydraulic diameter, mean speed and Re."""
    labels = lps.labels
    if field.velocity is None or field.velocity.shape[:3] != labels.shape:
        raise InputError("voxelised field and label volume are not aligned")
    nu = props.kinematic_viscosity if nu is None else nu
    vs = lps.voxel_size
    n = int(labels.max())
    z = np.broadcast_to(np.arange(labels.shape[2]), labels.shape)
    sel = labels > 0
    key = z[sel].astype(np.int64) * (n + 1) + labels[sel]
    speed = field.speed[sel]
    keys, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
    mean_u = np.bincount(inv, weights=speed) / cnt
    area = cnt * vs**2
    d = hydraulic_diameter(area)
    re = reynolds(mean_u, d * 1e-6, nu)
    return [
        ChannelSection(int(k // (n + 1)), (int(k // (n + 1)) + 0.5) * vs, int(k % (n + 1)),
                       float(a), float(dd), float(u), float(r))
        for k, a, dd, u, r in zip(keys, area, d, mean_u, re)
    ]


def sectional_flow_stats(sections, section_length, voxel_size, nz):
    """Mean Re and mean velocity over the channel elements of each z section."""
    plane = np.array([s.plane for s in sections], dtype=int)
    re = np.array([s.re for s in sections])
    u = np.array([s.u_mean for s in sections])
    rows = []
    for i, (a, b) in enumerate(section_bounds(nz, voxel_size, section_length)):
        m = (plane >= a) & (plane < b)
        cnt = int(m.sum())
        rows.append(
            {
                "section": i,
                "z_min_um": a * voxel_size,
                "z_max_um": b * voxel_size,
                "mean_re": float(re[m].mean()) if cnt else float("nan"),
                "mean_u": float(u[m].mean()) if cnt else float("nan"),
                "n": cnt,
            }
        )
    return rows


def write_channel_csv(sections, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plane_z_um", "label", "area_um2", "dhyd_um", "u_mean", "re"])
        for s in sections:
            w.writerow([f"{s.plane_z_um:.6g}", s.label, f"{s.area_um2:.6g}",
                        f"{s.dhyd_um:.6g}", f"{s.u_mean:.9g}", f"{s.re:.9g}"])


def write_sectional_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "z_min_um", "z_max_um", "mean_re", "mean_u", "n"])
        for r in rows:
            w.writerow([r["section"], f"{r['z_min_um']:.6g}", f"{r['z_max_um']:.6g}",
                        f"{r['mean_re']:.9g}", f"{r['mean_u']:.9g}", r["n"]])
