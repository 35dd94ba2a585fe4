"""Synthetic input files for end-to-end runs of the command line tool."""

import numpy as np

from porescope import voxel
from porescope.props import DARCY_M2, FluidProps

from phantoms import tube

VS = 6.25


def network_phantom(n=48):
    """Two axial channels joined by a bridge, plus an isolated speck."""
    x, y, z = np.ogrid[:n, :n, :n]
    a = (x - 14) ** 2 + (y - 14) ** 2 <= 36
    b = (x - 33) ** 2 + (y - 31) ** 2 <= 16
    bridge = (np.abs(x - y) <= 2) & (x >= 14) & (x <= 33) & (np.abs(z - n // 2) <= 3)
    pore = np.broadcast_to(a | b, (n, n, n)) | bridge
    pore[40:43, 5:8, 10:13] = True
    return pore


def grey(pore):
    return np.where(pore, 10, 200).astype(np.uint8)


def write_volume(path, pore, vs=VS):
    voxel.write_raw(voxel.VoxelGrid(grey(pore), vs), path)
    return path


def write_nodal(path, pore, vs=VS, step=3, umax=0.02):
    """Planes every ``step`` voxels with a parabolic axial profile per channel."""
    from scipy import ndimage
    n = pore.shape[0]
    nz = pore.shape[2]
    with open(path, "w") as fh:
        fh.write("x,y,z,u,v,w,p\n")
        for k in range(0, nz, step):
            sl = pore[:, :, k]
            dist = ndimage.distance_transform_edt(sl)
            lab, m = ndimage.label(sl)
            peak = ndimage.maximum(dist, lab, np.arange(1, m + 1)) if m else []
            for i in range(n):
                for j in range(pore.shape[1]):
                    w = 0.0
                    if sl[i, j]:
                        w = float(umax * (1 - (1 - dist[i, j] / peak[lab[i, j] - 1]) ** 2))
                    p = 101326.0 - (k + 0.5) / nz
                    fh.write(f"{(i + 0.5) * vs * 1e-6!r},{(j + 0.5) * vs * 1e-6!r},"
                             f"{(k + 0.5) * vs * 1e-6!r},0.0,0.0,{w!r},{p!r}\n")
    return path


def write_streamlines(path, n_streams=40, seed=1):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write("stream_id,point_index,x,y,z,speed,p,dhyd,re\n")
        for s in range(n_streams):
            theta = rng.vonmises(np.radians(2 * 93.5), 1.34) / 2
            length = rng.uniform(50, 300)
            speed = rng.uniform(0.01, 0.05)
            wig = rng.uniform(0, 10)
            t = np.linspace(0, 1, 30)
            x = np.cos(theta) * length * t + wig * np.sin(6 * t)
            y = np.sin(theta) * length * t
            z = 300 * t
            d = 40 + 10 * np.sin(3 * t)
            re = speed * d * 1e-6 / 8.93e-7
            rows = np.stack([x, y, z, np.full_like(t, speed), 101326.0 - t, d, re], 1)
            for i, r in enumerate(rows.tolist()):
                fh.write(f"{s},{i}," + ",".join(repr(v) for v in r) + "\n")
    return path


def forchheimer_grid():
    return np.array([1e-4, 5e-4, 1e-3, 2.5e-3, 5e-3, 1e-2, 1.5e-2, 2.025e-2,
                     0.05, 0.1, 0.2, 0.4, 0.8, 1.2, 1.64025])


def write_curves(path, k_darcy=(27.0, 22.0), beta=(5e4, 8e4)):
    props = FluidProps()
    v = forchheimer_grid()
    with open(path, "w") as fh:
        fh.write("section,inlet_velocity_mps,dp_per_length_pa_per_m\n")
        for i, (k, b) in enumerate(zip(k_darcy, beta), start=1):
            y = props.dynamic_viscosity / (k * DARCY_M2) * v + b * props.density * v**2
            for vi, yi in zip(v, y):
                fh.write(f"{i},{float(vi)!r},{float(yi)!r}\n")
    return path


def tube_volume(path, n=128, r=12, vs=VS):
    return write_volume(path, tube(n, r), vs)
