"""Maximal-ball pore segmentation and architectural statistics.

The pipeline is: exact Euclidean distance transform, reduction to a set of
maximal inscribed spheres, hierarchical grouping of spheres into pore
families, and growth of the family seeds over the remaining pore voxels in
order of decreasing distance. Distances are handled internally as squared
voxel counts, which are exact integers.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import InputError
from .voxel import section_bounds, sectional_porosity

# 13 of the 26 neighbour offsets; the other 13 are their negations
HALF_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ],
    dtype=np.int64,
)
OFFSETS_26 = np.concatenate([HALF_OFFSETS, -HALF_OFFSETS])


@dataclass(frozen=True)
class DistanceMap:
    """Euclidean distance from each pore voxel to the nearest solid voxel.

    ``sq`` holds squared distances in voxel units (exact integers stored as
    float64); ``distance`` gives micrometres.
    """

    sq: np.ndarray
    voxel_size: float

    @property
    def dims(self):
        return self.sq.shape

    @property
    def distance(self):
        return np.sqrt(self.sq) * self.voxel_size

    @property
    def pore(self):
        return self.sq > 0


@dataclass(frozen=True)
class InscribedSpheres:
    centres: np.ndarray  # (n, 3) voxel indices
    sq_radii: np.ndarray  # squared radius in voxel units
    voxel_size: float

    def __len__(self):
        return len(self.sq_radii)

    @property
    def radii(self):
        """Radii in micrometres."""
        return np.sqrt(self.sq_radii) * self.voxel_size

    @property
    def centres_um(self):
        return (self.centres + 0.5) * self.voxel_size

    def __iter__(self):
        for c, r in zip(self.centres_um, self.radii):
            yield tuple(c), float(r)


@dataclass(frozen=True)
class LabeledPoreSpace:
    labels: np.ndarray  # int32, 0 = solid, 1..P = pore family
    voxel_size: float
    centroids: np.ndarray  # (P, 3) micrometres, row i is label i+1
    radii: np.ndarray  # (P,) max inscribed radius, micrometres
    counts: np.ndarray  # (P,) voxel counts
    adjacency: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def n_pores(self):
        return len(self.counts)

    @property
    def coordination(self):
        deg = np.zeros(self.n_pores, dtype=np.int64)
        if len(self.adjacency):
            np.add.at(deg, self.adjacency[:, 0] - 1, 1)
            np.add.at(deg, self.adjacency[:, 1] - 1, 1)
        return deg


# ---------------------------------------------------------- distance map


@njit(cache=True)
def _envelope_1d(f, out, v, z):
    # lower envelope of parabolas (Felzenszwalb & Huttenlocher), inf = no site
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@njit(cache=True)
def _edt_axis(a, axis):
    nx, ny, nz = a.shape
    n = a.shape[axis]
    f = np.empty(n)
    out = np.empty(n)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    if axis == 0:
        for j in range(ny):
            for k in range(nz):
                for i in range(n):
                    f[i] = a[i, j, k]
                _envelope_1d(f, out, v, z)
                for i in range(n):
                    a[i, j, k] = out[i]
    elif axis == 1:
        for i in range(nx):
            for k in range(nz):
                for j in range(n):
                    f[j] = a[i, j, k]
                _envelope_1d(f, out, v, z)
                for j in range(n):
                    a[i, j, k] = out[j]
    else:
        for i in range(nx):
            for j in range(ny):
                for k in range(n):
                    f[k] = a[i, j, k]
                _envelope_1d(f, out, v, z)
                for k in range(n):
                    a[i, j, k] = out[k]


def squared_edt(pore):
    """Exact squared EDT (voxel units) of a boolean array.

    Voxels outside the array are not treated as solid, unless the array has
    no solid voxel at all, in which case it is framed by a solid shell.
    """
    pore = np.asarray(pore, dtype=bool)
    pad = bool(pore.all())
    if pad:
        pore = np.pad(pore, 1, constant_values=False)
    a = np.where(pore, np.inf, 0.0)
    for axis in range(3):
        _edt_axis(a, axis)
    if pad:
        a = a[1:-1, 1:-1, 1:-1]
    return np.ascontiguousarray(a)


def distance_transform(mask):
    if not mask.pore.any():
        raise InputError("distance transform of an empty pore space")
    return DistanceMap(squared_edt(mask.pore), mask.voxel_size)


# ----------------------------------------------------- maximal spheres


def _sphere_order(centres, sq_radii):
    """Descending radius, then lexicographic (z, y, x) of the centre."""
    return np.lexsort((centres[:, 0], centres[:, 1], centres[:, 2], -sq_radii))


@njit(cache=True)
def _greedy_cover(sq, order_idx, shape):
    nx, ny, nz = shape
    covered = np.zeros(sq.size, dtype=np.bool_)
    keep = np.zeros(order_idx.size, dtype=np.bool_)
    for n in range(order_idx.size):
        flat = order_idx[n]
        if covered[flat]:
            continue
        keep[n] = True
        cx = flat // (ny * nz)
        cy = (flat // nz) % ny
        cz = flat % nz
        r2 = sq.ravel()[flat]
        r = int(np.sqrt(r2))
        for i in range(max(0, cx - r), min(nx, cx + r + 1)):
            di = (i - cx) * (i - cx)
            for j in range(max(0, cy - r), min(ny, cy + r + 1)):
                dj = di + (j - cy) * (j - cy)
                if dj >= r2:
                    continue
                for k in range(max(0, cz - r), min(nz, cz + r + 1)):
                    if dj + (k - cz) * (k - cz) < r2:
                        covered[(i * ny + j) * nz + k] = True
    return keep


def maximal_inscribed_spheres(dmap):
    """Reduce the per-voxel inscribed spheres to a non-redundant cover.

    Candidates are visited largest first; a candidate is kept only if its
    centre is not already inside (strictly) a kept sphere. The result covers
    every pore voxel, and no kept sphere is contained in another kept one,
    since a contained sphere's centre lies strictly inside its container.
    """
    sq = np.ascontiguousarray(dmap.sq)
    idx = np.flatnonzero(sq > 0)
    centres = np.stack(np.unravel_index(idx, sq.shape), axis=1).astype(np.int64)
    order = _sphere_order(centres, sq.ravel()[idx])
    keep = _greedy_cover(sq, idx[order], sq.shape)
    sel = order[keep]
    return InscribedSpheres(centres[sel], sq.ravel()[idx[sel]], dmap.voxel_size)


# ------------------------------------------------------------ segmentation


def sphere_families(spheres):
    """Group spheres into pore families by overlap hierarchy.

    Spheres are processed largest first (ties by lexicographic z, y, x). A
    sphere that overlaps no earlier sphere founds a new family; otherwise it
    inherits the family of the earliest (largest) overlapping sphere.

    Returns ``(order, family)`` where ``family[n]`` is the 1-based family of
    sphere ``order[n]``.
    """
    order = _sphere_order(spheres.centres, spheres.sq_radii)
    c = spheres.centres[order].astype(float)
    r = np.sqrt(spheres.sq_radii[order])
    family = np.zeros(len(order), dtype=np.int64)
    if len(order) == 0:
        return order, family
    tree = cKDTree(c)
    rmax = r[0]
    n_fam = 0
    for n in range(len(order)):
        cand = tree.query_ball_point(c[n], r[n] + rmax)
        parent = -1
        for m in sorted(cand):
            if m >= n:
                break
            if np.sum((c[m] - c[n]) ** 2) < (r[m] + r[n]) ** 2:
                parent = m
                break
        if parent < 0:
            n_fam += 1
            family[n] = n_fam
        else:
            family[n] = family[parent]
    return order, family


@njit(cache=True)
def _grow(labels, sq, levels, pending, offsets):
    # labels/sq are flat views of (nx, ny, nz); pending: unlabelled pore voxels
    # sorted by descending sq. Each level floods from labelled voxels into
    # unlabelled voxels with sq >= level, one BFS layer at a time; within a
    # layer a voxel joins the smallest family id among labelled neighbours.
    nx, ny, nz = labels.shape
    lab = labels.ravel()
    sqf = sq.ravel()
    active = np.zeros(lab.size, dtype=np.bool_)
    n_pend = pending.size
    ptr = 0
    frontier = np.empty(n_pend, dtype=np.int64)
    nxt = np.empty(n_pend, dtype=np.int64)
    choice = np.empty(n_pend, dtype=np.int32)
    queued = np.zeros(lab.size, dtype=np.bool_)
    for li in range(levels.size):
        lev = levels[li]
        while ptr < n_pend and sqf[pending[ptr]] >= lev:
            active[pending[ptr]] = True
            ptr += 1
        # initial frontier: active unlabelled voxels touching a label
        nf = 0
        for t in range(ptr):
            p = pending[t]
            if lab[p] != 0 or queued[p]:
                continue
            x = p // (ny * nz)
            y = (p // nz) % ny
            zz = p % nz
            for o in range(offsets.shape[0]):
                i = x + offsets[o, 0]
                j = y + offsets[o, 1]
                k = zz + offsets[o, 2]
                if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                    continue
                if lab[(i * ny + j) * nz + k] > 0:
                    frontier[nf] = p
                    queued[p] = True
                    nf += 1
                    break
        while nf > 0:
            for t in range(nf):
                p = frontier[t]
                x = p // (ny * nz)
                y = (p // nz) % ny
                zz = p % nz
                best = 0
                for o in range(offsets.shape[0]):
                    i = x + offsets[o, 0]
                    j = y + offsets[o, 1]
                    k = zz + offsets[o, 2]
                    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                        continue
                    q = lab[(i * ny + j) * nz + k]
                    if q > 0 and (best == 0 or q < best):
                        best = q
                choice[t] = best
            for t in range(nf):
                lab[frontier[t]] = choice[t]
                queued[frontier[t]] = False
            nn = 0
            for t in range(nf):
                p = frontier[t]
                x = p // (ny * nz)
                y = (p // nz) % ny
                zz = p % nz
                for o in range(offsets.shape[0]):
                    i = x + offsets[o, 0]
                    j = y + offsets[o, 1]
                    k = zz + offsets[o, 2]
                    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                        continue
                    q = (i * ny + j) * nz + k
                    if active[q] and lab[q] == 0 and not queued[q]:
                        queued[q] = True
                        nxt[nn] = q
                        nn += 1
            for t in range(nn):
                frontier[t] = nxt[t]
            nf = nn


def segment_pores(dmap, spheres):
    """Label the pore space into pore families.

    Sphere centres are seeded with their family; the remaining pore voxels
    are assigned by growing the seeds level by level through decreasing
    distance values. Where several families reach a voxel in the same step,
    the family founded by the larger sphere wins.
    """
    sq = np.ascontiguousarray(dmap.sq)
    order, family = sphere_families(spheres)
    labels = np.zeros(sq.shape, dtype=np.int32)
    cen = spheres.centres[order]
    labels[cen[:, 0], cen[:, 1], cen[:, 2]] = family
    pore = sq > 0
    pend = np.flatnonzero(pore.ravel() & (labels.ravel() == 0))
    pend = pend[np.argsort(-sq.ravel()[pend], kind="stable")]
    levels = np.unique(sq[pore])[::-1].copy()
    _grow(labels, sq, levels, pend, OFFSETS_26)

    # pore components that hold no sphere centre (not expected for a cover)
    rest = pore & (labels == 0)
    if rest.any():
        extra, n_extra = ndimage.label(rest, structure=np.ones((3, 3, 3)))
        n_fam = int(family.max()) if len(family) else 0
        labels[rest] = extra[rest] + n_fam
    return build_labeled_space(labels, dmap)


def build_labeled_space(labels, dmap):
    """Per-pore records and adjacency for a label volume."""
    labels = np.asarray(labels, dtype=np.int32)
    vs = dmap.voxel_size
    n = int(labels.max())
    ids = np.arange(1, n + 1)
    counts = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    if n:
        centroids = np.array(ndimage.center_of_mass(np.ones(labels.shape), labels, ids))
        centroids = (centroids.reshape(n, 3) + 0.5) * vs
        radii = np.sqrt(np.asarray(ndimage.maximum(dmap.sq, labels, ids), dtype=float)) * vs
    else:
        centroids = np.zeros((0, 3))
        radii = np.zeros(0)
    lps = LabeledPoreSpace(labels, vs, centroids, radii, counts.astype(np.int64))
    adj, _ = pore_connectivity(lps)
    return LabeledPoreSpace(labels, vs, centroids, radii, counts.astype(np.int64), adj)


# ---------------------------------------------------------- connectivity


def _shifted_pairs(a, off):
    """Views of ``a`` and of its neighbour at offset ``off``."""
    src = []
    dst = []
    for d, n in zip(off, a.shape):
        if d >= 0:
            src.append(slice(0, n - d))
            dst.append(slice(d, n))
        else:
            src.append(slice(-d, n))
            dst.append(slice(0, n + d))
    return tuple(src), tuple(dst)


def neighbour_label_pairs(labels):
    """Yield ``(src_slices, dst_slices, la, lb)`` for touching distinct labels."""
    for off in HALF_OFFSETS:
        s, d = _shifted_pairs(labels, off)
        la = labels[s]
        lb = labels[d]
        hit = (la != lb) & (la > 0) & (lb > 0)
        if hit.any():
            yield s, d, hit, la[hit], lb[hit]


def pore_connectivity(lps):
    """26-neighbour adjacency of pore families.

    Returns
    -------
    adjacency : (m, 2) int array
        Sorted unique pairs ``(i, j)`` with ``i < j``.
    coordination : (P,) int array
        Number of neighbours of pore ``k`` at index ``k - 1``.
    """
    labels = lps.labels
    n = int(labels.max()) if labels.size else 0
    keys = []
    for _, _, _, la, lb in neighbour_label_pairs(labels):
        lo = np.minimum(la, lb).astype(np.int64)
        hi = np.maximum(la, lb).astype(np.int64)
        keys.append(np.unique(lo * (n + 1) + hi))
    if keys:
        k = np.unique(np.concatenate(keys))
        adj = np.stack([k // (n + 1), k % (n + 1)], axis=1)
    else:
        adj = np.zeros((0, 2), dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    np.add.at(deg, adj[:, 0] - 1, 1)
    np.add.at(deg, adj[:, 1] - 1, 1)
    return adj, deg


# ------------------------------------------------------------------ stats


def equivalent_diameter(area):
    """Diameter of the circle with the given area."""
    return np.sqrt(4.0 * np.asarray(area, dtype=float) / np.pi)


def plane_label_areas(labels, voxel_size):
    """Pixel counts of each label in each z plane.

    Returns arrays ``(plane, label, area_um2)`` over all non-empty
    (plane, label) cross-sections.
    """
    nz = labels.shape[2]
    n = int(labels.max())
    z = np.broadcast_to(np.arange(nz), labels.shape)
    sel = labels > 0
    key = z[sel].astype(np.int64) * (n + 1) + labels[sel]
    k, cnt = np.unique(key, return_counts=True)
    return k // (n + 1), k % (n + 1), cnt * voxel_size**2


@dataclass
class StatsReport:
    voxel_size: float
    sections: list  # dicts with per-section summaries
    sample: dict
    distributions: dict

    def rows(self):
        for s in self.sections + [self.sample]:
            for param in ("porosity", "channel_diameter_um", "connectivity"):
                m, sd, n = s[param]
                yield [s["section"], f"{s['z_min_um']:.6g}", f"{s['z_max_um']:.6g}",
                       param, f"{m:.6g}", f"{sd:.6g}", n]


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan"), 0
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), sd, int(x.size)


def _histogram(x, bins):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"bin_edges": [], "counts": []}
    counts, edges = np.histogram(x, bins=bins)
    return {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def architectural_stats(lps, mask, section_length):
    """Porosity, channel diameter and connectivity per section and overall.

    Channel diameter is the equivalent circular diameter of every labelled
    cross-section in every plane. Connectivity is the coordination number
    of each pore, binned into the section holding its centroid.
    """
    if lps.labels.shape != mask.pore.shape:
        raise InputError("label volume and mask dimensions differ")
    vs = mask.voxel_size
    nz = mask.pore.shape[2]
    plane, _, area = plane_label_areas(lps.labels, vs)
    diam = equivalent_diameter(area)
    coord = lps.coordination
    cz = lps.centroids[:, 2] if lps.n_pores else np.zeros(0)
    por = sectional_porosity(mask, section_length)
    sections = []
    for sec, (a, b) in zip(por, section_bounds(nz, vs, section_length)):
        in_planes = (plane >= a) & (plane < b)
        in_pores = (cz >= a * vs) & (cz < b * vs)
        if b == nz:
            in_pores |= cz >= b * vs
        plane_por = np.count_nonzero(mask.pore[:, :, a:b], axis=(0, 1)) / (
            mask.pore.shape[0] * mask.pore.shape[1]
        )
        sections.append(
            {
                "section": sec.index,
                "z_min_um": sec.z_min_um,
                "z_max_um": sec.z_max_um,
                "porosity": (sec.porosity, _mean_sd(plane_por)[1], b - a),
                "channel_diameter_um": _mean_sd(diam[in_planes]),
                "connectivity": _mean_sd(coord[in_pores]),
            }
        )
    all_plane_por = np.count_nonzero(mask.pore, axis=(0, 1)) / (
        mask.pore.shape[0] * mask.pore.shape[1]
    )
    sample = {
        "section": "all",
        "z_min_um": 0.0,
        "z_max_um": nz * vs,
        "porosity": (mask.porosity, _mean_sd(all_plane_por)[1], nz),
        "channel_diameter_um": _mean_sd(diam),
        "connectivity": _mean_sd(coord),
    }
    max_coord = int(coord.max()) if coord.size else 0
    distributions = {
        "channel_diameter_um": _histogram(diam, 20),
        "connectivity": _histogram(coord, np.arange(max_coord + 2) - 0.5),
        "pore_radius_um": _histogram(lps.radii, 20),
        "plane_porosity": _histogram(all_plane_por, 20),
    }
    return StatsReport(vs, sections, sample, distributions)


# -------------------------------------------------------------------- I/O


def write_labels(lps, path):
    path = Path(path)
    path.write_bytes(lps.labels.transpose(2, 1, 0).astype("<u4").tobytes())
    meta = {"dims": list(lps.labels.shape), "voxel_size_um": lps.voxel_size, "dtype": "uint32"}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_labels(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    nx, ny, nz = meta["dims"]
    a = np.frombuffer(path.read_bytes(), dtype="<u4").reshape(nz, ny, nx).transpose(2, 1, 0)
    return np.ascontiguousarray(a.astype(np.int32)), float(meta["voxel_size_um"])


def write_stats_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "z_min_um", "z_max_um", "parameter", "mean", "sd", "n"])
        w.writerows(report.rows())


def write_distributions_json(report, path):
    Path(path).write_text(json.dumps(report.distributions, indent=2, sort_keys=True) + "\n")
