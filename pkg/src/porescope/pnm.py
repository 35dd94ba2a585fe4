"""Pore network extraction, pressure solve, permeability and particle tracing."""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedNetwork, InputError, NoSpanningPath, SolverDiverged
from .poreseg import neighbour_label_pairs
from .props import DARCY_M2, FluidProps

UM = 1e-6
DEFAULT_N_PARTICLES = 2000


def throat_conductance(radius, length, props, shape_factor=1.0):
    """Hagen-Poiseuille conductance ``pi r^4 / (8 mu L)`` in m^3/(Pa s).

    ``radius`` and ``length`` are in micrometres.
    """
    radius = np.asarray(radius, dtype=float)
    length = np.asarray(length, dtype=float)
    if np.any(radius <= 0) or np.any(length <= 0):
        raise InputError("throat radius and length must be positive")
    r = radius * UM
    return shape_factor * np.pi * r**4 / (8.0 * props.dynamic_viscosity * length * UM)


@dataclass
class PoreNetwork:
    """Pores and throats with Hagen-Poiseuille conductances.

    Pores are addressed by row index; ``ids`` maps rows to external ids
    (pore labels, with virtual reservoir nodes appended after them).
    """

    ids: np.ndarray
    centroids: np.ndarray  # (n, 3) um
    radii: np.ndarray  # um
    conns: np.ndarray  # (m, 2) row indices
    throat_radii: np.ndarray  # um
    throat_lengths: np.ndarray  # um
    conductance: np.ndarray  # m^3/(Pa s)
    inlet: np.ndarray  # row indices held at the inlet pressure
    outlet: np.ndarray
    virtual: np.ndarray = field(default=None)  # bool per pore
    voxel_size: float = 1.0
    dims: tuple = None

    def __post_init__(self):
        if self.virtual is None:
            self.virtual = np.zeros(len(self.ids), dtype=bool)

    @property
    def n_pores(self):
        return len(self.ids)

    @property
    def n_throats(self):
        return len(self.conns)

    @property
    def sample_area_m2(self):
        nx, ny, _ = self.dims
        return nx * ny * (self.voxel_size * UM) ** 2

    @property
    def sample_length_m(self):
        return self.dims[2] * self.voxel_size * UM

    def adjacency_matrix(self, weights=None):
        n = self.n_pores
        w = np.ones(self.n_throats) if weights is None else weights
        a, b = self.conns.T
        return sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))),
            shape=(n, n),
        ).tocsr()

    def has_spanning_path(self):
        if len(self.inlet) == 0 or len(self.outlet) == 0:
            return False
        _, comp = connected_components(self.adjacency_matrix(), directed=False)
        return bool(np.intersect1d(comp[self.inlet], comp[self.outlet]).size)


def _throat_radii(labels, sq, adjacency, voxel_size):
    # largest inscribed radius over the voxels on either side of each interface
    n = int(labels.max())
    keys = adjacency[:, 0] * (n + 1) + adjacency[:, 1]
    best = np.zeros(len(keys))
    for s, d, hit, la, lb in neighbour_label_pairs(labels):
        k = np.minimum(la, lb).astype(np.int64) * (n + 1) + np.maximum(la, lb)
        v = np.maximum(sq[s][hit], sq[d][hit])
        pos = np.searchsorted(keys, k)
        np.maximum.at(best, pos, v)
    return np.sqrt(best) * voxel_size


def extract_network(lps, dmap, props=None, shape_factor=1.0):
    """Build a pore network from labelled pore space.

    One pore per label and one throat per adjacent label pair. Pores that
    touch both the inlet and outlet faces are not held at a boundary
    pressure themselves; instead they are joined to a virtual inlet node on
    the z=0 face and a virtual outlet node on the far face, each throat
    using the pore radius and the centroid-to-face distance. For a single
    spanning pore this reproduces the pore's own end-to-end conductance.
    """
    props = props or FluidProps()
    vs = lps.voxel_size
    labels = lps.labels
    nz = labels.shape[2]
    n = lps.n_pores
    if n == 0:
        raise NoSpanningPath("no pores")
    adj = lps.adjacency.astype(np.int64)
    conns = adj - 1
    t_rad = _throat_radii(labels, dmap.sq, adj, vs) if len(adj) else np.zeros(0)
    dist = np.linalg.norm(lps.centroids[conns[:, 0]] - lps.centroids[conns[:, 1]], axis=1)
    t_len = np.maximum(dist - lps.radii[conns[:, 0]] - lps.radii[conns[:, 1]], vs)

    ids = np.arange(1, n + 1)
    centroids = lps.centroids.copy()
    radii = lps.radii.copy()
    virtual = np.zeros(n, dtype=bool)
    at_in = np.zeros(n + 1, dtype=bool)
    at_out = np.zeros(n + 1, dtype=bool)
    at_in[np.unique(labels[:, :, 0])] = True
    at_out[np.unique(labels[:, :, -1])] = True
    at_in, at_out = at_in[1:], at_out[1:]
    spanning = np.flatnonzero(at_in & at_out)
    inlet = np.flatnonzero(at_in & ~at_out)
    outlet = np.flatnonzero(at_out & ~at_in)

    if spanning.size:
        lz = nz * vs
        xy = centroids[spanning, :2].mean(axis=0)
        vin, vout = n, n + 1
        ids = np.append(ids, [n + 1, n + 2])
        centroids = np.vstack([centroids, [*xy, 0.0], [*xy, lz]])
        radii = np.append(radii, [0.0, 0.0])
        virtual = np.append(virtual, [True, True])
        cz = lps.centroids[spanning, 2]
        extra = np.concatenate(
            [np.stack([np.full(spanning.size, vin), spanning], 1),
             np.stack([spanning, np.full(spanning.size, vout)], 1)]
        )
        conns = np.vstack([conns, extra]) if len(conns) else extra
        t_rad = np.concatenate([t_rad, lps.radii[spanning], lps.radii[spanning]])
        t_len = np.concatenate([t_len, np.maximum(cz, vs), np.maximum(lz - cz, vs)])
        inlet = np.append(inlet, vin)
        outlet = np.append(outlet, vout)

    g = throat_conductance(t_rad, t_len, props, shape_factor) if len(conns) else np.zeros(0)
    net = PoreNetwork(
        ids=ids,
        centroids=centroids,
        radii=radii,
        conns=conns.astype(np.int64).reshape(-1, 2),
        throat_radii=t_rad,
        throat_lengths=t_len,
        conductance=g,
        inlet=inlet,
        outlet=outlet,
        virtual=virtual,
        voxel_size=vs,
        dims=tuple(labels.shape),
    )
    if not net.has_spanning_path():
        raise NoSpanningPath("no pore path connects the inlet and outlet faces")
    return net


# ------------------------------------------------------------------ solve


def bicg(A, b, x0=None, rtol=1e-10, maxiter=None, M=None):
    """Preconditioned biconjugate gradient iteration.

    ``M`` is the diagonal of a Jacobi preconditioner (defaults to
    ``A.diagonal()``). Returns ``(x, converged, iterations, rel_residual)``.
    """
    n = len(b)
    maxiter = maxiter or 10 * n
    Minv = 1.0 / (A.diagonal() if M is None else M)
    AT = A.T.tocsr()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rt = r.copy()
    bnorm = np.linalg.norm(b) or 1.0
    res = np.linalg.norm(r) / bnorm
    if res <= rtol:
        return x, True, 0, res
    rho_prev = 1.0
    p = pt = None
    for it in range(1, maxiter + 1):
        z = Minv * r
        zt = Minv * rt
        rho = z @ rt
        if rho == 0.0:
            break
        if p is None:
            p, pt = z.copy(), zt.copy()
        else:
            beta = rho / rho_prev
            p = z + beta * p
            pt = zt + beta * pt
        q = A @ p
        qt = AT @ pt
        denom = pt @ q
        if denom == 0.0:
            break
        alpha = rho / denom
        x += alpha * p
        r -= alpha * q
        rt -= alpha * qt
        rho_prev = rho
        res = np.linalg.norm(r) / bnorm
        if res <= rtol:
            return x, True, it, res
    # recompute true residual before giving up
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, res <= rtol, it, res


@dataclass
class PressureSolution:
    pressure: np.ndarray  # Pa per pore (nan for pores cut off from both faces)
    flux: np.ndarray  # m^3/s per throat, positive from conns[:, 0] to conns[:, 1]
    q_in: float
    q_out: float
    residual: float
    iterations: int
    p_in: float
    p_out: float

    @property
    def total_flux(self):
        return self.q_in


def _laplacian(n, conns, g):
    a, b = conns.T
    L = sparse.coo_matrix(
        (np.concatenate([-g, -g, g, g]),
         (np.concatenate([a, b, a, b]), np.concatenate([b, a, a, b]))),
        shape=(n, n),
    )
    return L.tocsr()


def solve_pressure(net, p_in, p_out, rtol=1e-10, maxiter=None):
    """Steady incompressible flow with fixed inlet/outlet pore pressures.

    Solves flux conservation ``sum_j g_ij (P_i - P_j) = 0`` at every free
    pore by BiCG with Jacobi preconditioning. The system is scaled to unit
    pressure drop and unit maximum conductance before solving.
    """
    if p_in == p_out:
        raise InputError("inlet and outlet pressures must differ")
    if not net.has_spanning_path():
        raise DisconnectedNetwork("no inlet-outlet path in network")
    n = net.n_pores
    gmax = net.conductance.max()
    gs = net.conductance / gmax
    phi = np.full(n, np.nan)  # scaled pressure, 1 at inlet, 0 at outlet
    fixed = np.zeros(n, dtype=bool)
    fixed[net.inlet] = True
    fixed[net.outlet] = True
    phi[net.inlet] = 1.0
    phi[net.outlet] = 0.0
    # free pores must reach a fixed pore, otherwise the system is singular
    _, comp = connected_components(net.adjacency_matrix(), directed=False)
    anchored = np.isin(comp, np.unique(comp[fixed]))
    free = np.flatnonzero(~fixed & anchored)
    res, its = 0.0, 0
    if free.size:
        L = _laplacian(n, net.conns, gs)
        A = L[free][:, free]
        fixed_idx = np.flatnonzero(fixed)
        rhs = -(L[free][:, fixed_idx] @ phi[fixed_idx])
        x, ok, its, res = bicg(A.tocsr(), rhs, rtol=rtol, maxiter=maxiter)
        if not ok or not np.all(np.isfinite(x)):
            raise SolverDiverged(f"BiCG stopped at relative residual {res:.3e} after {its} iterations")
        phi[free] = x
    dp = p_in - p_out
    pressure = p_out + dp * phi
    a, b = net.conns.T
    flux = net.conductance * dp * (phi[a] - phi[b])
    flux = np.where(np.isfinite(flux), flux, 0.0)
    inl = np.zeros(n, dtype=bool)
    inl[net.inlet] = True
    outl = np.zeros(n, dtype=bool)
    outl[net.outlet] = True
    # flux leaving inlet pores into non-inlet pores, entering outlet pores
    q_in = flux[inl[a] & ~inl[b]].sum() - flux[inl[b] & ~inl[a]].sum()
    q_out = flux[outl[b] & ~outl[a]].sum() - flux[outl[a] & ~outl[b]].sum()
    return PressureSolution(pressure, flux, float(q_in), float(q_out), float(res), int(its),
                            float(p_in), float(p_out))


def pore_flux_imbalance(net, sol):
    """Net signed flux out of every pore."""
    out = np.zeros(net.n_pores)
    a, b = net.conns.T
    np.add.at(out, a, sol.flux)
    np.add.at(out, b, -sol.flux)
    return out


@dataclass(frozen=True)
class Permeability:
    k_m2: float
    k_darcy: float


def permeability(sol, area, length, props, dp=None):
    """Darcy permeability ``k = Q mu L / (A dP)`` of a solved sample.

    ``area`` in m^2, ``length`` in m; ``dp`` defaults to the pressure
    difference of the solution.
    """
    dp = sol.p_in - sol.p_out if dp is None else dp
    if not dp > 0:
        raise InputError("pressure drop must be positive")
    k = sol.total_flux * props.dynamic_viscosity * length / (area * dp)
    return Permeability(float(k), float(k / DARCY_M2))


# -------------------------------------------------------------- particles


@dataclass
class TortuosityResult:
    values: np.ndarray
    paths: list  # pore row indices visited by each particle (None if trapped)
    n_trapped: int
    n_particles: int
    seed: int

    @property
    def mean(self):
        return float(np.mean(self.values)) if self.values.size else float("nan")

    @property
    def sd(self):
        return float(np.std(self.values, ddof=1)) if self.values.size > 1 else 0.0

    def histogram(self, bins=20):
        if self.values.size == 0:
            return np.zeros(0, dtype=int), np.zeros(0)
        hi = max(self.values.max(), 1.0 + 1e-9)
        counts, edges = np.histogram(self.values, bins=bins, range=(1.0, hi))
        return counts, edges


def _outgoing(net, flux, tol):
    # CSR of downstream neighbours with their (positive) flux
    a, b = net.conns.T
    cut = tol * np.abs(flux).max() if flux.size else 0.0
    src = np.concatenate([a[flux > cut], b[flux < -cut]])
    dst = np.concatenate([b[flux > cut], a[flux < -cut]])
    w = np.concatenate([flux[flux > cut], -flux[flux < -cut]])
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    ptr = np.searchsorted(src, np.arange(net.n_pores + 1))
    return ptr, dst, w


def _trace(i, seed, start_p, starts, ptr, dst, w, is_out, centroids, max_steps):
    rng = np.random.default_rng([seed, i])
    node = starts[np.searchsorted(start_p, rng.random() * start_p[-1], side="right")]
    path = [node]
    length = 0.0
    for _ in range(max_steps):
        if is_out[node]:
            chord = np.linalg.norm(centroids[node] - centroids[path[0]])
            if chord == 0.0:
                return None, None
            return length / chord, path
        lo, hi = ptr[node], ptr[node + 1]
        if lo == hi:
            return None, None
        cw = np.cumsum(w[lo:hi])
        k = lo + min(np.searchsorted(cw, rng.random() * cw[-1], side="right"), hi - lo - 1)
        nxt = dst[k]
        length += np.linalg.norm(centroids[nxt] - centroids[node])
        node = nxt
        path.append(node)
    return None, None


def particle_tortuosity(net, sol, n_particles=DEFAULT_N_PARTICLES, seed=0, threads=None, tol=1e-12):
    """Flux-weighted random walk of virtual particles from inlet to outlet.

    Each particle starts in an inlet pore drawn with probability proportional
    to the flux that pore delivers into the network, then repeatedly moves
    along a downstream throat drawn in proportion to its flux. Tortuosity is
    path length over the straight distance between the first and last pore.
    Particle ``i`` draws from its own stream seeded by ``(seed, i)`` so the
    result does not depend on ``threads``. Particles that reach a pore with
    no downstream throat are counted as trapped and excluded.
    """
    if n_particles < 1:
        raise InputError("n_particles must be >= 1")
    ptr, dst, w = _outgoing(net, sol.flux, tol)
    inlet = np.unique(net.inlet)
    out_flux = np.array([w[ptr[p]:ptr[p + 1]].sum() for p in inlet])
    keep = out_flux > 0
    starts, out_flux = inlet[keep], out_flux[keep]
    if starts.size == 0:
        raise DisconnectedNetwork("no flux leaves the inlet pores")
    start_p = np.cumsum(out_flux)
    is_out = np.zeros(net.n_pores, dtype=bool)
    is_out[net.outlet] = True
    args = (seed, start_p, starts, ptr, dst, w, is_out, net.centroids, net.n_pores + 1)

    if threads is None:
        threads = int(os.environ.get("PORESCOPE_THREADS", "1") or 1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda i: _trace(i, *args), range(n_particles)))
    else:
        results = [_trace(i, *args) for i in range(n_particles)]
    values = np.array([t for t, _ in results if t is not None])
    paths = [p for _, p in results]
    trapped = sum(1 for t, _ in results if t is None)
    return TortuosityResult(values, paths, trapped, n_particles, seed)


# -------------------------------------------------------------------- I/O


def network_to_dict(net):
    pores = [
        {"id": int(i), "x": float(c[0]), "y": float(c[1]), "z": float(c[2]), "r": float(r)}
        for i, c, r in zip(net.ids, net.centroids, net.radii)
    ]
    throats = [
        {"a": int(net.ids[a]), "b": int(net.ids[b]), "r": float(r), "l": float(l), "g": float(g)}
        for (a, b), r, l, g in zip(net.conns, net.throat_radii, net.throat_lengths, net.conductance)
    ]
    return {
        "pores": pores,
        "throats": throats,
        "inlet": [int(net.ids[i]) for i in net.inlet],
        "outlet": [int(net.ids[i]) for i in net.outlet],
        "virtual": [int(net.ids[i]) for i in np.flatnonzero(net.virtual)],
        "voxel_size_um": net.voxel_size,
        "dims": list(net.dims) if net.dims else None,
    }


def network_from_dict(d):
    ids = np.array([p["id"] for p in d["pores"]], dtype=np.int64)
    row = {int(i): k for k, i in enumerate(ids)}
    centroids = np.array([[p["x"], p["y"], p["z"]] for p in d["pores"]], dtype=float).reshape(-1, 3)
    th = d["throats"]
    conns = np.array([[row[t["a"]], row[t["b"]]] for t in th], dtype=np.int64).reshape(-1, 2)
    virtual = np.zeros(len(ids), dtype=bool)
    virtual[[row[i] for i in d.get("virtual", [])]] = True
    return PoreNetwork(
        ids=ids,
        centroids=centroids,
        radii=np.array([p["r"] for p in d["pores"]], dtype=float),
        conns=conns,
        throat_radii=np.array([t["r"] for t in th], dtype=float),
        throat_lengths=np.array([t["l"] for t in th], dtype=float),
        conductance=np.array([t["g"] for t in th], dtype=float),
        inlet=np.array([row[i] for i in d.get("inlet", [])], dtype=np.int64),
        outlet=np.array([row[i] for i in d.get("outlet", [])], dtype=np.int64),
        virtual=virtual,
        voxel_size=float(d.get("voxel_size_um", 1.0)),
        dims=tuple(d["dims"]) if d.get("dims") else None,
    )


def save_network(net, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path):
    return network_from_dict(json.loads(Path(path).read_text()))


def write_solution_csv(net, sol, pore_path, throat_path):
    with open(pore_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pore_id", "pressure_pa"])
        for i, p in zip(net.ids, sol.pressure):
            w.writerow([int(i), f"{p:.12g}"])
    with open(throat_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pore_a", "pore_b", "flux_m3_per_s"])
        for (a, b), q in zip(net.conns, sol.flux):
            w.writerow([int(net.ids[a]), int(net.ids[b]), f"{q:.12g}"])


def write_tortuosity_csv(result, path, bins=20):
    counts, edges = result.histogram(bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", int(c)])
