import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porescope import flowfield as ff
from porescope import poreseg as ps
from porescope.errors import InsufficientPlanes, MalformedHeader, NonMonotonePlanes
from porescope.props import FluidProps
from porescope.voxel import BinaryPoreMask

from phantoms import tube

VS = 6.25


def write_nodal(path, rows):
    with open(path, "w") as fh:
        fh.write("x,y,z,u,v,w,p\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


def planes_from(fn, xy_um, zs_um):
    """Plane list sampling ``fn(x, y, z) -> (n, 4)`` at given points (um)."""
    return [ff.Plane(z, xy_um.copy(), fn(xy_um[:, 0], xy_um[:, 1], np.full(len(xy_um), z))) for z in zs_um]


def centre_grid(nx, ny, step=1):
    gx, gy = np.meshgrid((np.arange(0, nx, step) + 0.5) * VS, (np.arange(0, ny, step) + 0.5) * VS, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], 1)


def full_mask(n=12, nz=12):
    return BinaryPoreMask(np.ones((n, n, nz), bool), VS)


# ------------------------------------------------------------- import


def test_two_planes_four_points(tmp_path):
    rows = [(x * 1e-5, y * 1e-5, z * 1e-5, 0, 0, 1, 0) for z in (1, 4) for x in (0, 1) for y in (0, 1)]
    write_nodal(tmp_path / "n.csv", rows)
    f = ff.import_nodal_csv(tmp_path / "n.csv", VS)
    assert len(f.planes) == 2
    assert [len(p.xy) for p in f.planes] == [4, 4]
    assert f.planes[0].z == pytest.approx(10.0)


def test_scattered_affine_exact_inside_hull():
    rng = np.random.default_rng(3)
    xy = rng.random((200, 2)) * 60 + 1
    fn = lambda x, y, z: np.stack([2 + x, -y, 0.5 * x + y, 3 * x - y + 7], 1)
    pl = ff.Plane(10.0, xy, fn(xy[:, 0], xy[:, 1], None))
    q = rng.random((50, 2)) * 20 + 20
    np.testing.assert_allclose(ff._interp_plane(pl, q[:, 0], q[:, 1], VS), fn(q[:, 0], q[:, 1], None),
                               atol=1e-10)


def test_bad_header(tmp_path):
    (tmp_path / "n.csv").write_text("x,y,z,u,v,p\n0,0,0,0,0,0\n")
    with pytest.raises(MalformedHeader):
        ff.import_nodal_csv(tmp_path / "n.csv", VS)


def test_planes_out_of_order(tmp_path):
    rows = [(0, 0, 5e-5, 0, 0, 1, 0), (0, 0, 1e-5, 0, 0, 1, 0)]
    write_nodal(tmp_path / "n.csv", rows)
    with pytest.raises(NonMonotonePlanes):
        ff.import_nodal_csv(tmp_path / "n.csv", VS)


def test_bucketing_tolerance(tmp_path):
    jitter = 0.05 * VS * 1e-6
    rows = [(0, 0, 1e-5, 0, 0, 1, 0), (1e-5, 0, 1e-5 + jitter, 0, 0, 1, 0), (0, 0, 5e-5, 0, 0, 1, 0)]
    write_nodal(tmp_path / "n.csv", rows)
    assert [len(p.xy) for p in ff.import_nodal_csv(tmp_path / "n.csv", VS).planes] == [2, 1]


def test_roundtrip_export_import(tmp_path):
    rng = np.random.default_rng(0)
    n, nz = 6, 9
    mask = full_mask(n, nz)
    field = ff.FlowField([], VS, rng.normal(size=(n, n, nz, 3)), rng.normal(size=(n, n, nz)) * 1e5)
    ff.export_nodal_csv(field, tmp_path / "n.csv")
    back = ff.interpolate_to_voxels(ff.import_nodal_csv(tmp_path / "n.csv", VS), mask)
    np.testing.assert_allclose(back.velocity, field.velocity, rtol=0, atol=1e-12)
    np.testing.assert_allclose(back.pressure, field.pressure, rtol=1e-12)


# -------------------------------------------------------- interpolation


def test_needs_two_planes():
    xy = centre_grid(4, 4)
    f = ff.FlowField(planes_from(lambda x, y, z: np.zeros((len(x), 4)), xy, [VS / 2]), VS)
    with pytest.raises(InsufficientPlanes):
        ff.interpolate_to_voxels(f, full_mask(4, 4))


def test_uniform_field():
    pore = tube(12, 4, nz=12)
    mask = BinaryPoreMask(pore, VS)
    uni = lambda x, y, z: np.tile([0.0, 0.0, 1.0, 0.0], (len(x), 1))
    f = ff.interpolate_to_voxels(ff.FlowField(planes_from(uni, centre_grid(12, 12, 3), [10, 40, 70]), VS), mask)
    np.testing.assert_array_equal(f.velocity[pore], np.tile([0, 0, 1.0], (pore.sum(), 1)))
    assert np.all(f.velocity[~pore] == 0)


def test_linear_in_z():
    mask = full_mask(6, 30)
    lin = lambda x, y, z: np.stack([0 * z, 0 * z, z, 0 * z], 1)
    zs = (np.arange(0, 30, 3) + 0.5) * VS
    f = ff.interpolate_to_voxels(ff.FlowField(planes_from(lin, centre_grid(6, 6, 2), zs), VS), mask)
    zc = (np.arange(30) + 0.5) * VS
    inside = (zc >= zs[0]) & (zc <= zs[-1])
    np.testing.assert_allclose(f.velocity[..., 2][:, :, inside], np.broadcast_to(zc[inside], (6, 6, inside.sum())),
                               rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.integers(2, 3))
def test_affine_exact_on_grid(c, step):
    a, bx, by, bz = c
    fn = lambda x, y, z: np.stack([a + bx * x, by * y, bz * z, a + bx * x + by * y + bz * z], 1)
    n, nz = 10, 13
    zs = (np.arange(0, nz, step) + 0.5) * VS
    xy = centre_grid(n, n, 1)
    f = ff.interpolate_to_voxels(ff.FlowField(planes_from(fn, xy, zs), VS), full_mask(n, nz))
    gx, gy, gz = np.meshgrid(*[(np.arange(k) + 0.5) * VS for k in (n, n, nz)], indexing="ij")
    inside = gz <= zs[-1]
    expect = fn(gx[inside], gy[inside], gz[inside])
    np.testing.assert_allclose(f.velocity[inside], expect[:, :3], atol=1e-10 * (1 + np.abs(expect).max()))
    np.testing.assert_allclose(f.pressure[inside], expect[:, 3], atol=1e-10 * (1 + np.abs(expect).max()))


def poiseuille(R_um, cx, cy, umax=1.0):
    def fn(x, y, z):
        r2 = ((x - cx) ** 2 + (y - cy) ** 2) / R_um**2
        w = umax * np.clip(1 - r2, 0, None)
        return np.stack([0 * w, 0 * w, w, 0 * w], 1)
    return fn


@pytest.mark.parametrize("R", [8, 12])
@pytest.mark.parametrize("scattered", [False, True])
def test_poiseuille_disc(R, scattered):
    n, nz = 2 * R + 6, 13
    c = (n // 2 + 0.5) * VS
    pore = tube(n, R, nz=nz)
    mask = BinaryPoreMask(pore, VS)
    fn = poiseuille(R * VS, c, c)
    if scattered:
        # unstructured mesh nodes: fluid interior plus no-slip wall nodes
        rng = np.random.default_rng(R)
        m = int(np.pi * R * R)
        rr = R * VS * np.sqrt(rng.random(m))
        th = rng.random(m) * 2 * np.pi
        tw = np.linspace(0, 2 * np.pi, int(4 * np.pi * R), endpoint=False)
        xy = np.concatenate([np.stack([c + rr * np.cos(th), c + rr * np.sin(th)], 1),
                             np.stack([c + R * VS * np.cos(tw), c + R * VS * np.sin(tw)], 1)])
    else:
        xy = centre_grid(n, n)
    zs = (np.arange(0, nz, 3) + 0.5) * VS
    f = ff.interpolate_to_voxels(ff.FlowField(planes_from(fn, xy, zs), VS), mask)
    gx, gy, gz = np.meshgrid(*[(np.arange(k) + 0.5) * VS for k in (n, n, nz)], indexing="ij")
    exact = fn(gx[pore], gy[pore], gz[pore])[:, 2]
    assert np.max(np.abs(f.velocity[pore][:, 2] - exact)) <= 0.05 * 1.0


# ---------------------------------------------------------- channel Re


def test_hydraulic_diameter_values():
    assert ff.hydraulic_diameter(np.pi) == pytest.approx(2.0, rel=1e-15)
    assert abs(ff.hydraulic_diameter(100 * VS**2) - 70.52) <= 0.01


def test_reynolds_thousand():
    assert ff.reynolds(1.0, 0.893e-3, 8.93e-7) == pytest.approx(1000.0, rel=1e-12)


@settings(max_examples=50)
@given(st.floats(1e-4, 10), st.floats(1e-6, 1e-2), st.floats(0.1, 10))
def test_reynolds_linear(u, d, s):
    nu = 8.93e-7
    base = ff.reynolds(u, d, nu)
    assert ff.reynolds(u * s, d, nu) == pytest.approx(base * s, rel=1e-12)
    assert ff.reynolds(u, d * s, nu) == pytest.approx(base * s, rel=1e-12)


def segmented(pore):
    d = ps.distance_transform(BinaryPoreMask(pore, VS))
    return ps.segment_pores(d, ps.maximal_inscribed_spheres(d))


def test_channel_re_uniform_tube():
    pore = tube(16, 5, nz=9)
    lps = segmented(pore)
    vel = np.zeros(pore.shape + (3,))
    vel[pore, 2] = 0.5
    field = ff.FlowField([], VS, vel, np.zeros(pore.shape))
    secs = ff.channel_re(field, lps, FluidProps())
    assert len(secs) == 9
    a = pore[:, :, 0].sum() * VS**2
    for s in secs:
        assert s.area_um2 == pytest.approx(a)
        assert s.dhyd_um == pytest.approx(np.sqrt(4 * a / np.pi))
        assert s.re == pytest.approx(0.5 * s.dhyd_um * 1e-6 / 8.93e-7, rel=1e-12)
    rows = ff.sectional_flow_stats(secs, 3 * VS, VS, 9)
    assert len(rows) == 3
    assert len({r["mean_re"] for r in rows}) == 1


def test_zero_field_zero_re():
    pore = tube(12, 4, nz=6)
    field = ff.FlowField([], VS, np.zeros(pore.shape + (3,)), np.zeros(pore.shape))
    assert all(s.re == 0 for s in ff.channel_re(field, segmented(pore), FluidProps()))


def test_channel_areas_sum_to_plane_area():
    rng = np.random.default_rng(1)
    from scipy import ndimage
    pore = ndimage.binary_opening(rng.random((20, 20, 10)) < 0.6)
    lps = segmented(pore)
    field = ff.FlowField([], VS, np.ones(pore.shape + (3,)), np.zeros(pore.shape))
    secs = ff.channel_re(field, lps, FluidProps())
    per_plane = np.zeros(10)
    for s in secs:
        per_plane[s.plane] += s.area_um2
    np.testing.assert_allclose(per_plane, pore.sum(axis=(0, 1)) * VS**2)


def test_doubled_velocity_doubles_section_re():
    pore = tube(16, 5, nz=8)
    lps = segmented(pore)
    vel = np.zeros(pore.shape + (3,))
    vel[pore, 2] = 0.3
    vel[:, :, 4:, 2] *= 2
    secs = ff.channel_re(ff.FlowField([], VS, vel, np.zeros(pore.shape)), lps, FluidProps())
    rows = ff.sectional_flow_stats(secs, 4 * VS, VS, 8)
    assert rows[1]["mean_re"] / rows[0]["mean_re"] == pytest.approx(2.0, rel=1e-12)


def test_channel_csv(tmp_path):
    pore = tube(12, 4, nz=4)
    vel = np.zeros(pore.shape + (3,))
    vel[pore, 2] = 1.0
    secs = ff.channel_re(ff.FlowField([], VS, vel, np.zeros(pore.shape)), segmented(pore), FluidProps())
    ff.write_channel_csv(secs, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "plane_z_um,label,area_um2,dhyd_um,u_mean,re"
    assert len(lines) == 5
