"""Command line pipeline: ``porescope ingest|analyze|flow|regime``.

Configuration comes from a JSON file (``--config``) with every key
overridable on the command line; precedence is CLI > file > defaults.
Exit codes: 0 success, 1 computational failure, 2 input or usage error.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, flowfield, pnm, poreseg, regime, streamline, svgplot, voxel
from .errors import ComputationError, InputError
from .props import FluidProps

log = logging.getLogger("porescope")

MASK_FILE = "mask.raw"
LABELS_FILE = "labels.raw"


@dataclass
class PipelineConfig:
    input: str = None
    format: str = None
    mask: str = None
    nodal: str = None
    streamlines: str = None
    curves: str = None
    threshold: int = voxel.DEFAULT_THRESHOLD
    dark_is_pore: bool = True
    voxel_size_um: float = voxel.DEFAULT_VOXEL_SIZE_UM
    section_length_um: float = 400.0
    density: float = 997.0
    dynamic_viscosity: float = 8.8871e-4
    kinematic_viscosity: float = 8.93e-7
    min_component_voxels: int = voxel.DEFAULT_MIN_COMPONENT_VOXELS
    connectivity: int = 26
    shape_factor: float = 1.0
    p_in: float = 101326.0
    p_out: float = 101325.0
    n_particles: int = pnm.DEFAULT_N_PARTICLES
    seed: int = 0
    deviation_tol: float = regime.DEFAULT_DEVIATION_TOL
    axial: bool = True

    def validate(self):
        if not 0 <= self.threshold <= 255:
            raise InputError(f"config field 'threshold' must lie in [0, 255], got {self.threshold}")
        for name in ("voxel_size_um", "section_length_um", "density", "dynamic_viscosity",
                     "kinematic_viscosity", "shape_factor", "n_particles", "deviation_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise InputError(f"config field '{name}' must be positive, got {v!r}")
        if self.min_component_voxels < 0:
            raise InputError("config field 'min_component_voxels' must be >= 0")
        if self.connectivity not in (6, 26):
            raise InputError("config field 'connectivity' must be 6 or 26")
        if self.p_in <= self.p_out:
            raise InputError("config field 'p_in' must exceed 'p_out'")

    @property
    def props(self):
        return FluidProps(self.density, self.dynamic_viscosity, self.kinematic_viscosity)

    def digest(self):
        """SHA-256 of the canonical JSON form of the configuration."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(name, raw):
    f = {f.name: f for f in fields(PipelineConfig)}[name]
    default = f.default
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "no"):
            return False
        raise InputError(f"config field '{name}' must be a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise InputError(f"config field '{name}' has invalid value {raw!r}") from None
    return None if raw is None else str(raw)


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InputError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("config file must hold a JSON object")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InputError(f"unknown config field(s): {', '.join(unknown)}")
    cfg = PipelineConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


# -------------------------------------------------------------- outputs


class Reporter:
    """Writes report files under ``out`` stamped with the config digest."""

    def __init__(self, out, cfg):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.digest = cfg.digest()
        self.written = []

    def path(self, name):
        self.written.append(name)
        return self.out / name

    def csv(self, name, writer, *args):
        # module writers produce the table; prepend a provenance comment
        p = self.path(name)
        writer(*args, p)
        body = p.read_text()
        p.write_text(f"# porescope {__version__} config_sha256={self.digest}\n" + body)

    def json(self, name, obj):
        obj = {"config_sha256": self.digest, "porescope_version": __version__, **obj}
        self.path(name).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def svg(self, name, text):
        text = text.replace("</svg>", f"<!-- config_sha256={self.digest} -->\n</svg>")
        self.path(name).write_text(text)


def _clean(obj):
    # JSON has no NaN/inf; numpy scalars become Python numbers
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _manifest(rep, cfg, command, inputs):
    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items() if v},
        "config": dataclasses.asdict(cfg),
        "config_sha256": rep.digest,
        "tool_version": __version__,
        "outputs": sorted(rep.written),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (rep.out / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_mask(cfg, out):
    path = Path(cfg.mask) if cfg.mask else Path(out) / MASK_FILE
    if not path.exists():
        raise InputError(f"mask {path} not found; run 'porescope ingest' first")
    grid = voxel.read_raw(path)
    return voxel.BinaryPoreMask(grid.data > 0, grid.voxel_size)


# ------------------------------------------------------------- commands


def cmd_ingest(cfg, out):
    if not cfg.input:
        raise InputError("config field 'input' is required for ingest")
    grid = voxel.load_volume(cfg.input, cfg.format, cfg.voxel_size_um)
    mask = voxel.binarise(grid, cfg.threshold, cfg.dark_is_pore)
    cleaned, report = voxel.clean_pore_space(mask, cfg.min_component_voxels, cfg.connectivity)
    rep = Reporter(out, cfg)
    voxel.write_raw(voxel.VoxelGrid(cleaned.pore.astype(np.uint8), cleaned.voxel_size), rep.path(MASK_FILE))
    rep.written.append("mask.json")
    rep.csv("porosity.csv", voxel.write_porosity_csv,
            voxel.sectional_porosity(cleaned, cfg.section_length_um))
    rep.json("ingest.json", {
        "dims": list(grid.dims),
        "voxel_size_um": grid.voxel_size,
        "porosity_raw": mask.porosity,
        "porosity_clean": cleaned.porosity,
        "components_removed": report.components_removed,
        "voxels_removed": report.voxels_removed,
    })
    _manifest(rep, cfg, "ingest", {"input": cfg.input})
    log.info("porosity %.4f after cleaning (%d components removed)", cleaned.porosity,
             report.components_removed)
    return rep


def segment(mask):
    dmap = poreseg.distance_transform(mask)
    spheres = poreseg.maximal_inscribed_spheres(dmap)
    return dmap, spheres, poreseg.segment_pores(dmap, spheres)


def cmd_analyze(cfg, out, threads=None):
    mask = _load_mask(cfg, out)
    rep = Reporter(out, cfg)
    dmap, spheres, lps = segment(mask)
    poreseg.write_labels(lps, rep.path(LABELS_FILE))
    rep.written.append("labels.json")
    stats = poreseg.architectural_stats(lps, mask, cfg.section_length_um)
    rep.csv("stats.csv", poreseg.write_stats_csv, stats)
    rep.json("distributions.json", stats.distributions)

    props = cfg.props
    net = pnm.extract_network(lps, dmap, props, cfg.shape_factor)
    pnm_out = rep.path("network.json")
    pnm.save_network(net, pnm_out)
    sol = pnm.solve_pressure(net, cfg.p_in, cfg.p_out)
    pp, tp = rep.path("pressures.csv"), rep.path("throat_fluxes.csv")
    pnm.write_solution_csv(net, sol, pp, tp)
    for p in (pp, tp):
        p.write_text(f"# porescope {__version__} config_sha256={rep.digest}\n" + p.read_text())
    k = pnm.permeability(sol, net.sample_area_m2, net.sample_length_m, props)
    tort = pnm.particle_tortuosity(net, sol, cfg.n_particles, cfg.seed, threads=threads)
    rep.csv("tortuosity.csv", pnm.write_tortuosity_csv, tort)
    rep.json("permeability.json", {
        "n_pores": net.n_pores,
        "n_throats": net.n_throats,
        "n_spheres": len(spheres),
        "total_flux_m3_per_s": sol.total_flux,
        "outlet_flux_m3_per_s": sol.q_out,
        "solver_residual": sol.residual,
        "solver_iterations": sol.iterations,
        "sample_area_m2": net.sample_area_m2,
        "sample_length_m": net.sample_length_m,
        "k_m2": k.k_m2,
        "k_darcy": k.k_darcy,
        "tortuosity_mean": tort.mean,
        "tortuosity_sd": tort.sd,
        "particles": tort.n_particles,
        "trapped_particles": tort.n_trapped,
    })
    if cfg.curves:
        _regime_reports(cfg, rep)
    _manifest(rep, cfg, "analyze", {"mask": cfg.mask or str(Path(out) / MASK_FILE),
                                    "curves": cfg.curves})
    log.info("k = %.4g D from %d pores / %d throats", k.k_darcy, net.n_pores, net.n_throats)
    return rep


def _stream_rows(summaries):
    def write(rows, path):
        with open(path, "w") as fh:
            fh.write("stream_id,tortuosity,orientation_deg,mean_speed,mean_re,mean_dhyd\n")
            for s in rows:
                fh.write(f"{s.id},{s.tortuosity:.12g},{s.orientation:.9g},"
                         f"{s.means.get('speed', float('nan')):.9g},"
                         f"{s.means.get('re', float('nan')):.9g},"
                         f"{s.means.get('dhyd', float('nan')):.9g}\n")
    return write


def cmd_flow(cfg, out):
    if not cfg.nodal and not cfg.streamlines:
        raise InputError("flow needs 'nodal' and/or 'streamlines' inputs")
    rep = Reporter(out, cfg)
    props = cfg.props
    inputs = {"nodal": cfg.nodal, "streamlines": cfg.streamlines}
    if cfg.nodal:
        mask = _load_mask(cfg, out)
        lab_path = Path(out) / LABELS_FILE
        if lab_path.exists():
            labels, vs = poreseg.read_labels(lab_path)
            lps = poreseg.build_labeled_space(labels, poreseg.distance_transform(mask))
        else:
            _, _, lps = segment(mask)
        field = flowfield.interpolate_to_voxels(
            flowfield.import_nodal_csv(cfg.nodal, mask.voxel_size), mask)
        channels = flowfield.channel_re(field, lps, props)
        rep.csv("channel_re.csv", flowfield.write_channel_csv, channels)
        rows = flowfield.sectional_flow_stats(channels, cfg.section_length_um,
                                              mask.voxel_size, mask.dims[2])
        rep.csv("sectional_re.csv", flowfield.write_sectional_csv, rows)

    if cfg.streamlines:
        streams = streamline.read_streamlines_csv(cfg.streamlines)
        summaries = []
        for s in streams:
            fields_ = [f for f in ("speed", "re", "dhyd") if f in s.samples]
            summaries.append(streamline.stream_aggregate(s, fields_, cfg.axial))
        rep.csv("streams.csv", _stream_rows(summaries), summaries)
        angles, excluded = streamline.orientations(streams, cfg.axial)
        report = {"n": int(angles.size), "excluded": excluded, "axial": cfg.axial,
                  "mu_deg": None, "kappa": None}
        if angles.size >= 5:
            fit = streamline.fit_von_mises(angles, cfg.axial)
            report.update(mu_deg=fit.mu, kappa=fit.kappa, mean_resultant_length=fit.mean_resultant_length)
        tort = np.array([s.tortuosity for s in summaries])
        report["tortuosity_mean"] = float(tort.mean())
        report["tortuosity_sd"] = float(tort.std(ddof=1)) if tort.size > 1 else 0.0
        rep.json("vonmises.json", report)
        counts, edges = streamline.polar_histogram(angles, 36, cfg.axial)
        rep.csv("polar_histogram.csv", _write_hist, counts, edges)
        fit_label = (report["mu_deg"], report["kappa"]) if report["kappa"] is not None else None
        rep.svg("polar_histogram.svg", svgplot.polar_histogram(counts.tolist(), edges.tolist(), fit=fit_label))
        rep.svg("re_traces.svg", svgplot.traces(
            [(s.trace["arc_length_um"], s.trace["re"]) for s in summaries if "re" in s.trace],
            "Re along streamlines", "arc length (um)", "Re"))
        _regressions(rep, summaries)
    _manifest(rep, cfg, "flow", inputs)
    return rep


def _write_hist(counts, edges, path):
    with open(path, "w") as fh:
        fh.write("bin_lo_deg,bin_hi_deg,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo:.6g},{hi:.6g},{int(c)}\n")


def _regressions(rep, summaries):
    speed = np.array([s.means.get("speed", np.nan) for s in summaries])
    pairs = {
        "tortuosity": np.array([s.tortuosity for s in summaries]),
        "mean_dhyd_um": np.array([s.means.get("dhyd", np.nan) for s in summaries]),
        "mean_re": np.array([s.means.get("re", np.nan) for s in summaries]),
    }
    results = []
    for name, x in pairs.items():
        ok = np.isfinite(x) & np.isfinite(speed)
        if ok.sum() < 2 or np.ptp(x[ok]) == 0:
            continue
        r = streamline.regress(x[ok], speed[ok])
        results.append((name, r))
        rep.svg(f"regression_{name}.svg", svgplot.scatter(
            x[ok].tolist(), speed[ok].tolist(), f"mean speed vs {name}", name,
            "mean speed (m/s)", line=(r.slope, r.intercept)))

    def write(rows, path):
        with open(path, "w") as fh:
            fh.write("x,y,slope,intercept,r_squared,n\n")
            for name, r in rows:
                fh.write(f"{name},mean_speed,{r.slope:.9g},{r.intercept:.9g},{r.r_squared:.9g},{r.n}\n")

    rep.csv("regression.csv", write, results)


def _regime_reports(cfg, rep):
    curves = regime.read_curves_csv(cfg.curves)
    props = cfg.props
    fits = [regime.fit_regime(c, props, cfg.deviation_tol) for c in curves]
    rep.json("regime_fits.json", {"sections": [regime.fit_to_dict(f) for f in fits],
                                  "deviation_tol": cfg.deviation_tol})

    def write_fits(fits, path):
        with open(path, "w") as fh:
            fh.write("section,k_darcy_D,k_darcy_m2,r2_linear,k_forchheimer_D,beta_per_m,"
                     "transition_velocity_mps,max_rel_deviation\n")
            for f in fits:
                fo = f.forchheimer
                tr = "none" if f.transition_velocity is None else f"{f.transition_velocity:.9g}"
                fh.write(f"{f.section},{f.darcy.k_darcy:.9g},{f.darcy.k_m2:.9g},"
                         f"{f.darcy.r_squared:.9g},"
                         f"{'' if fo is None else format(fo.k_darcy, '.9g')},"
                         f"{'' if fo is None else format(fo.beta, '.9g')},{tr},"
                         f"{f.max_rel_deviation:.6g}\n")

    def write_dp(curves, path):
        vel, rows = regime.pressure_drop_report(curves)
        with open(path, "w") as fh:
            fh.write("section," + ",".join(f"{v:.9g}" for v in vel) + "\n")
            for sec, vals in rows:
                fh.write(f"{sec}," + ",".join("" if math.isnan(x) else f"{x:.6g}" for x in vals) + "\n")

    rep.csv("regime_report.csv", write_fits, fits)
    rep.csv("pressure_drop.csv", write_dp, curves)
    series = [(c.velocity.tolist(), (c.dp_per_length / 1e6).tolist()) for c in curves]
    rep.svg("regime.svg", svgplot.traces(series, "Pressure drop per length", "inlet velocity (m/s)",
                                         "dp/L (MPa/m)"))
    for f in fits:
        tr = "none" if f.transition_velocity is None else f"{f.transition_velocity:g} m/s"
        print(f"section {f.section}: k = {f.darcy.k_darcy:.4g} D, transition: {tr}")
    return fits


def cmd_regime(cfg, out):
    if not cfg.curves:
        raise InputError("regime needs a 'curves' input")
    rep = Reporter(out, cfg)
    _regime_reports(cfg, rep)
    _manifest(rep, cfg, "regime", {"curves": cfg.curves})
    return rep


# ------------------------------------------------------------------ main


OVERRIDABLE = [f for f in fields(PipelineConfig)]


def build_parser():
    parser = argparse.ArgumentParser(prog="porescope", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"porescope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "analyze", "flow", "regime"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="parallelism cap (default: $PORESCOPE_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in OVERRIDABLE:
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("PORESCOPE_THREADS", "1") or 1)
    try:
        overrides = {f.name: getattr(args, f.name) for f in OVERRIDABLE}
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            cmd_ingest(cfg, args.out)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.out, threads)
        elif args.command == "flow":
            cmd_flow(cfg, args.out)
        else:
            cmd_regime(cfg, args.out)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"porescope: error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"porescope: computation failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
