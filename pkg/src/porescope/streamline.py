"""Streamline geometry, orientation statistics and linear regressions.

Streamline positions are in micrometres. Orientations are measured in the
XY plane from the first to the last point; by default they are treated as
axial data (period 180 degrees) since the sign of travel along a channel
carries no structural information.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import i0e, i1e

from .errors import (
    ClosedPath,
    DegenerateXY,
    InputError,
    MissingSamples,
    TooFewSamples,
    ZeroVariance,
)

KAPPA_CAP = 1e4
SAMPLE_FIELDS = ("speed", "p", "dhyd", "re")


@dataclass
class Streamline:
    id: int
    points: np.ndarray  # (n, 3) um
    samples: dict = field(default_factory=dict)  # name -> (n,) array

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 2:
            raise InputError(f"stream {self.id}: need at least two 3D points")
        if np.any(np.all(np.diff(self.points, axis=0) == 0, axis=1)):
            raise InputError(f"stream {self.id}: consecutive points coincide")
        for k, v in self.samples.items():
            if len(v) != len(self.points):
                raise InputError(f"stream {self.id}: sample '{k}' length mismatch")

    def segment_lengths(self):
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def arc_length(self):
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths())])


def stream_tortuosity(s):
    """Path length over end-to-end chord."""
    length = math.fsum(s.segment_lengths())
    chord = float(np.linalg.norm(s.points[-1] - s.points[0]))
    if chord == 0.0 or chord <= 1e-12 * length:
        raise ClosedPath(f"stream {s.id}: start and end coincide")
    # rounding can leave a collinear polyline a hair shorter than its chord
    return max(length / chord, 1.0)


def stream_orientation_xy(s, axial=True):
    """XY-plane direction of the stream's net displacement, in degrees.

    Returned in ``[0, 180)`` for axial data, otherwise ``[0, 360)``.
    """
    dx, dy = s.points[-1, :2] - s.points[0, :2]
    scale = math.fsum(s.segment_lengths())
    if math.hypot(dx, dy) <= 1e-12 * scale:
        raise DegenerateXY(f"stream {s.id}: no net XY displacement")
    period = 180.0 if axial else 360.0
    return math.degrees(math.atan2(dy, dx)) % period % period


def orientations(streams, axial=True):
    """Orientation of every stream; returns ``(angles, n_excluded)``."""
    angles = []
    excluded = 0
    for s in streams:
        try:
            angles.append(stream_orientation_xy(s, axial))
        except DegenerateXY:
            excluded += 1
    return np.array(angles), excluded


# -------------------------------------------------------------- von Mises


@dataclass(frozen=True)
class VonMisesFit:
    mu: float  # degrees, reduced modulo the period
    kappa: float
    n: int
    axial: bool
    mean_resultant_length: float


def mean_resultant(theta):
    """Mean direction (rad) and mean resultant length of angles in radians."""
    c = math.fsum(np.cos(theta)) / len(theta)
    s = math.fsum(np.sin(theta)) / len(theta)
    return math.atan2(s, c), math.hypot(c, s)


def _a1(kappa):
    return i1e(kappa) / i0e(kappa)


def kappa_from_resultant(rbar, tol=1e-8, cap=KAPPA_CAP):
    """Solve ``I1(k)/I0(k) = rbar`` for the concentration ``k``.

    Starts from ``rbar (2 - rbar^2) / (1 - rbar^2)`` and refines by Newton
    steps; the result is capped at ``cap``.
    """
    if rbar <= 0.0:
        return 0.0
    if rbar >= 1.0:
        return cap
    k = rbar * (2.0 - rbar**2) / (1.0 - rbar**2)
    if k >= cap:
        return cap
    for _ in range(100):
        a = _a1(k)
        deriv = 1.0 - a / k - a * a
        if deriv <= 0.0:
            break
        step = (a - rbar) / deriv
        k_new = k - step
        if k_new <= 0.0:
            k_new = k / 2.0
        if abs(k_new - k) <= tol * max(1.0, k):
            k = k_new
            break
        k = k_new
        if k >= cap:
            return cap
    return min(k, cap)


def fit_von_mises(angles, axial=True):
    """Maximum-likelihood von Mises fit to angles in degrees.

    Axial angles are doubled before fitting and the mean direction halved
    afterwards, giving ``mu`` in ``[0, 180)``.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size < 5:
        raise TooFewSamples(f"need at least 5 angles, got {angles.size}")
    period = 180.0 if axial else 360.0
    theta = np.radians(angles * (360.0 / period))
    mean, rbar = mean_resultant(theta)
    mu = (math.degrees(mean) * period / 360.0) % period % period
    return VonMisesFit(mu, kappa_from_resultant(rbar), int(angles.size), axial, rbar)


def vonmises_pdf(theta_deg, mu, kappa, axial=True):
    """Density in degrees^-1 of the (optionally axial) von Mises law."""
    period = 180.0 if axial else 360.0
    x = np.radians((np.asarray(theta_deg) - mu) * 360.0 / period)
    return np.exp(kappa * (np.cos(x) - 1.0)) / (period * i0e(kappa))


def polar_histogram(angles, bins=36, axial=True):
    period = 180.0 if axial else 360.0
    counts, edges = np.histogram(np.asarray(angles) % period, bins=bins, range=(0.0, period))
    return counts, edges


# -------------------------------------------------------------- aggregates


@dataclass
class StreamSummary:
    id: int
    tortuosity: float
    orientation: float  # nan when the stream has no XY displacement
    means: dict
    trace: dict  # arc_length_um, z_um and per-point samples


def stream_aggregate(s, fields=("speed", "re", "dhyd"), axial=True):
    """Mean sampled parameters, tortuosity, orientation and the point trace."""
    missing = [f for f in fields if f not in s.samples or np.any(np.isnan(s.samples[f]))]
    if missing:
        raise MissingSamples(f"stream {s.id}: missing samples {', '.join(missing)}")
    means = {f: math.fsum(s.samples[f]) / len(s.points) for f in fields}
    try:
        orient = stream_orientation_xy(s, axial)
    except DegenerateXY:
        orient = float("nan")
    trace = {"arc_length_um": s.arc_length(), "z_um": s.points[:, 2].copy()}
    for f in SAMPLE_FIELDS:
        if f in s.samples:
            trace[f] = np.asarray(s.samples[f], dtype=float)
    return StreamSummary(s.id, stream_tortuosity(s), orient, means, trace)


# -------------------------------------------------------------- regression


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n: int


def regress(x, y):
    """Ordinary least squares line with coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("x and y must be 1D arrays of equal length")
    if x.size < 2:
        raise InputError("regression needs at least 2 points")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0.0:
        raise ZeroVariance("x has zero variance")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    ss_res = np.sum((y - (intercept + slope * x)) ** 2)
    ss_tot = np.sum((y - ym) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionResult(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)), int(x.size))


# -------------------------------------------------------------------- I/O


def read_streamlines_csv(path):
    """Read ``stream_id,point_index,x,y,z[,speed,p,dhyd,re]`` (positions in um)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        base = ["stream_id", "point_index", "x", "y", "z"]
        if header[:5] != base or any(h not in SAMPLE_FIELDS for h in header[5:]):
            raise InputError(f"{path}: expected header {','.join(base)}[,{','.join(SAMPLE_FIELDS)}]")
        rows = [r for r in reader if r]
    groups = {}
    for r in rows:
        if len(r) != len(header):
            raise InputError(f"{path}: row has {len(r)} fields, expected {len(header)}")
        groups.setdefault(int(r[0]), []).append(r)
    streams = []
    for sid in sorted(groups):
        g = sorted(groups[sid], key=lambda r: int(r[1]))
        pts = np.array([[float(v) for v in r[2:5]] for r in g])
        samples = {}
        for j, name in enumerate(header[5:], start=5):
            col = [r[j].strip() for r in g]
            if all(c == "" for c in col):
                continue
            samples[name] = np.array([float(c) if c else np.nan for c in col])
        streams.append(Streamline(sid, pts, samples))
    return streams


def write_streamlines_csv(streams, path, fields=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream_id", "point_index", "x", "y", "z", *fields])
        for s in streams:
            for i, p in enumerate(s.points):
                w.writerow([s.id, i, *(repr(float(v)) for v in p),
                            *(repr(float(s.samples[f][i])) for f in fields)])


def write_trace_csv(summary, path):
    keys = list(summary.trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in zip(*(summary.trace[k] for k in keys)):
            w.writerow([f"{v:.9g}" for v in row])
