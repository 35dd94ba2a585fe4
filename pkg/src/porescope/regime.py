"""Darcy and Forchheimer fits of pressure-gradient versus velocity curves."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, InputError, InsufficientPoints
from .props import DARCY_M2

DEFAULT_DEVIATION_TOL = 0.05


@dataclass
class RegimeCurve:
    """Inlet velocity (m/s) against pressure drop per unit length (Pa/m)."""

    velocity: np.ndarray
    dp_per_length: np.ndarray
    section: str = "sample"
    length: float = None  # m
    area: float = None  # m^2

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.dp_per_length = np.asarray(self.dp_per_length, dtype=float)
        if self.velocity.shape != self.dp_per_length.shape or self.velocity.ndim != 1:
            raise InputError("velocity and pressure-drop arrays must match")
        if np.any(self.velocity <= 0) or np.any(np.diff(self.velocity) <= 0):
            raise InputError(f"section {self.section}: velocities must be positive and strictly increasing")
        if np.any(self.dp_per_length <= 0):
            raise InputError(f"section {self.section}: pressure drops must be positive")


@dataclass(frozen=True)
class DarcyFit:
    slope: float  # mu / k, Pa s / m^2
    k_m2: float
    k_darcy: float
    r_squared: float
    n: int


@dataclass(frozen=True)
class ForchheimerFit:
    linear: float  # mu / k
    quadratic: float  # beta * rho
    k_m2: float
    k_darcy: float
    beta: float  # 1/m
    r_squared: float
    condition: float


@dataclass
class RegimeFit:
    section: str
    darcy: DarcyFit
    forchheimer: ForchheimerFit = None
    transition_velocity: float = None
    max_rel_deviation: float = None
    notes: list = field(default_factory=list)


def _r2(y, yhat):
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        return 1.0
    return float(min(max(1.0 - np.sum((y - yhat) ** 2) / ss_tot, 0.0), 1.0))


def fit_darcy(curve, props, v_max=np.inf):
    """Zero-intercept least squares of the points with ``v <= v_max``."""
    m = curve.velocity <= v_max
    if m.sum() < 2:
        raise InsufficientPoints(f"section {curve.section}: need 2 points with v <= {v_max:g}")
    v, y = curve.velocity[m], curve.dp_per_length[m]
    slope = float(v @ y / (v @ v))
    k = props.dynamic_viscosity / slope
    return DarcyFit(slope, k, k / DARCY_M2, _r2(y, slope * v), int(m.sum()))


def fit_forchheimer(curve, props, max_condition=1e10):
    """Least squares of ``dp/L = (mu/k) v + beta rho v^2`` with no constant."""
    v, y = curve.velocity, curve.dp_per_length
    if v.size < 3:
        raise InsufficientPoints(f"section {curve.section}: need 3 points for a Forchheimer fit")
    X = np.stack([v, v**2], axis=1)
    scale = np.linalg.norm(X, axis=0)
    Xs = X / scale
    cond = float(np.linalg.cond(Xs))
    if cond > max_condition:
        raise IllConditioned(f"section {curve.section}: design condition number {cond:.3g}")
    coef, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    a, b = coef / scale
    vmax = v[-1]
    if a <= 0 or a * vmax < 1e-8 * abs(b) * vmax**2:
        raise IllConditioned(
            f"section {curve.section}: linear coefficient {a:.3g} is not resolvable "
            f"(k unbounded); condition number {cond:.3g}"
        )
    k = props.dynamic_viscosity / a
    return ForchheimerFit(float(a), float(b), k, k / DARCY_M2, float(b / props.density),
                          _r2(y, X @ np.array([a, b])), cond)


def detect_transition(curve, deviation_tol=DEFAULT_DEVIATION_TOL, return_prefix=False):
    """First sampled velocity where the curve leaves the Darcy line.

    A zero-intercept line is fitted to the two lowest velocities; the prefix
    grows while the next point deviates from the line's prediction by at
    most ``deviation_tol`` (relative), refitting after each accepted point.
    Returns ``None`` when every point is accepted.
    """
    v, y = curve.velocity, curve.dp_per_length
    if v.size < 4:
        raise InsufficientPoints(f"section {curve.section}: need 4 points to detect a transition")
    n = 2
    transition = None
    while n < v.size:
        slope = v[:n] @ y[:n] / (v[:n] @ v[:n])
        pred = slope * v[n]
        if abs(y[n] - pred) / pred > deviation_tol:
            transition = float(v[n])
            break
        n += 1
    return (transition, n) if return_prefix else transition


def fit_regime(curve, props, deviation_tol=DEFAULT_DEVIATION_TOL, v_max=None):
    """Transition, Darcy fit on the linear prefix and Forchheimer fit."""
    notes = []
    if v_max is None:
        if curve.velocity.size >= 4:
            transition, n = detect_transition(curve, deviation_tol, return_prefix=True)
        else:
            transition, n = None, curve.velocity.size
        v_max = curve.velocity[n - 1]
    else:
        transition = detect_transition(curve, deviation_tol) if curve.velocity.size >= 4 else None
    darcy = fit_darcy(curve, props, v_max)
    m = curve.velocity <= v_max
    pred = darcy.slope * curve.velocity[m]
    dev = float(np.max(np.abs(curve.dp_per_length[m] - pred) / pred))
    forch = None
    if curve.velocity.size >= 3:
        try:
            forch = fit_forchheimer(curve, props)
        except IllConditioned as exc:
            notes.append(str(exc))
    return RegimeFit(curve.section, darcy, forch, transition, dev, notes)


# -------------------------------------------------------------- reporting


def pressure_drop_report(curves):
    """Per-section pressure drop per length (MPa/m) with a sample-average row.

    ``curves`` is a sequence of RegimeCurve. Returns ``(velocities, rows)``
    where each row is ``(section, [MPa/m or nan per velocity])`` and the last
    row is the average over sections sampled at each velocity.
    """
    velocities = np.unique(np.concatenate([c.velocity for c in curves]))
    rows = []
    table = np.full((len(curves), len(velocities)), np.nan)
    for i, c in enumerate(curves):
        idx = np.searchsorted(velocities, c.velocity)
        table[i, idx] = c.dp_per_length / 1e6
        rows.append((c.section, table[i].tolist()))
    avg = [float(np.nanmean(col)) if np.any(~np.isnan(col)) else float("nan") for col in table.T]
    rows.append(("average", avg))
    return velocities, rows


def read_curves_csv(path):
    """Read ``section,inlet_velocity_mps,dp_per_length_pa_per_m`` into curves."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["section", "inlet_velocity_mps", "dp_per_length_pa_per_m"]:
            raise InputError(f"{path}: expected header section,inlet_velocity_mps,dp_per_length_pa_per_m")
        groups = {}
        for r in reader:
            if not r:
                continue
            try:
                groups.setdefault(r[0].strip(), []).append((float(r[1]), float(r[2])))
            except (ValueError, IndexError):
                raise InputError(f"{path}: malformed row {r!r}") from None
    if not groups:
        raise InputError(f"{path}: no data rows")
    curves = []
    for sec, pts in groups.items():
        pts.sort()
        curves.append(RegimeCurve([p[0] for p in pts], [p[1] for p in pts], sec))
    return curves


def write_curves_csv(curves, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "inlet_velocity_mps", "dp_per_length_pa_per_m"])
        for c in curves:
            for v, y in zip(c.velocity, c.dp_per_length):
                w.writerow([c.section, repr(float(v)), repr(float(y))])


def fit_to_dict(fit):
    d = fit.darcy
    out = {
        "section": fit.section,
        "darcy": {"slope_pa_s_per_m2": d.slope, "k_m2": d.k_m2, "k_darcy": d.k_darcy,
                  "r_squared": d.r_squared, "n": d.n},
        "transition_velocity_mps": fit.transition_velocity,
        "max_rel_deviation": fit.max_rel_deviation,
        "notes": fit.notes,
    }
    if fit.forchheimer is not None:
        f = fit.forchheimer
        out["forchheimer"] = {"k_m2": f.k_m2, "k_darcy": f.k_darcy, "beta_per_m": f.beta,
                              "r_squared": f.r_squared, "condition": f.condition}
    else:
        out["forchheimer"] = None
    return out
