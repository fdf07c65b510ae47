"""Command line front end: ``eddyscope <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io as eio
from .config import ExperimentConfig, target_rotation, target_shape
from .errors import ConfigError, EddyscopeError, InconsistentInputs
from .io import FormatError

log = logging.getLogger("eddyscope")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------- helpers

def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg.seed_base = args.seed
    return cfg


def _out(args, cfg) -> str:
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _array(cfg, q=None):
    from .forward import plates

    g = cfg.geometry
    return plates(g.L, g.n_side, g.half_width, g.p, g.q if q is None else q)


def _search_grid(cfg):
    from .localization import SearchGrid

    w = cfg.search.half_width
    return SearchGrid.plane((-w, w), (-w, w), cfg.search.step,
                            float(cfg.target.center[2]))


def target_cpts(cfg: ExperimentConfig) -> list:
    """Solver CPTs of the configured target, one per configured frequency."""
    from .solver.vie import cpt_sweep
    from .tensor_core import rotate_cpt

    shape = target_shape(cfg)
    cpts = cpt_sweep(shape, cfg.target.h, cfg.physics.physical(), cfg.frequencies,
                     scale=cfg.target.scale)
    if cfg.target.rotation_angle:
        rot = target_rotation(cfg)
        cpts = [rotate_cpt(c, rot) for c in cpts]
    return cpts


def _dictionary(cfg, args, omegas=None):
    from .dictionary import ShapeDictionary, table_dictionary

    omegas = omegas or cfg.frequencies
    path = getattr(args, "dictionary", None)
    prov = cfg.dictionary.provenance
    if path or prov == "file":
        d = ShapeDictionary.load(path or cfg.resolve_path(cfg.dictionary.path))
        freqs = list(d.entries[0].descriptor.frequencies)
        # A multi-frequency file serves any subset of its frequencies.
        return d if freqs == list(map(float, omegas)) else d.restricted(omegas)
    if prov == "paper_table":
        return table_dictionary()
    return solver_dictionary(cfg, omegas)


def solver_dictionary(cfg, omegas):
    from .dictionary import build_dictionary
    from .solver.shapes import LABEL_TO_KIND, ShapeSpec
    from .solver.vie import cpt_sweep

    phys = cfg.physics.physical()
    shapes = []
    for label in cfg.dictionary.shapes:
        if label not in LABEL_TO_KIND:
            raise ConfigError(f"unknown dictionary shape {label!r}")
        t0 = time.time()
        cpts = cpt_sweep(ShapeSpec(LABEL_TO_KIND[label]), cfg.dictionary.h, phys, omegas)
        log.info("dictionary shape %s: %d frequencies in %.1fs", label, len(omegas),
                 time.time() - t0)
        shapes.append((label, cpts))
    return build_dictionary(shapes, omegas, "solver")


def _emit(args, payload):
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    else:
        for k, v in payload.items():
            print(f"{k},{v if not isinstance(v, (list, dict)) else json.dumps(v)}")


def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    from .forward import TargetInstance, add_noise, msr_forward, noise_for_level
    from .dictionary import trial_seed
    from .plotting import plot_singular_values

    cfg = _config(args)
    out = _out(args, cfg)
    level = args.noise_level if args.noise_level is not None else cfg.noise_levels[0]
    cpts = target_cpts(cfg)
    files = []
    for f, (w, cpt) in enumerate(zip(cfg.frequencies, cpts)):
        target = TargetInstance(cfg.target.center, cpt, cfg.physics.physical().with_omega(w))
        for l in range(3):
            A = msr_forward(target, _array(cfg, np.eye(3)[l]))
            if level > 0:
                A = add_noise(A, noise_for_level(A, level), trial_seed(cfg.seed_base, f, l))
            name = f"msr_f{f:02d}_q{l + 1}.emsr"
            eio.write_msr(os.path.join(out, name), A)
            if args.format == "csv":
                eio.atomic_write(os.path.join(out, name[:-5] + ".csv"), eio.msr_to_csv(A))
            files.append(name)
            if f == 0 and l == 2:
                plot_singular_values(A.singular_values(), os.path.join(out, "msr_singular_values.png"))
    manifest = {"files": files, "frequencies": cfg.frequencies, "noise_level": level,
                "center": list(map(float, cfg.target.center)), "seed_base": cfg.seed_base}
    eio.write_json(os.path.join(out, "simulate.json"), manifest)
    _emit(args, {"written": len(files), "out": out})
    return EXIT_OK


def _read_msrs(paths):
    try:
        return [eio.read_msr(p) for p in paths]
    except FileNotFoundError as exc:
        raise OSError(str(exc)) from exc


def cmd_locate(args) -> int:
    from .localization import locate
    from .plotting import plot_imaging_map

    cfg = _config(args)
    out = _out(args, cfg)
    msrs = _read_msrs(args.msr)
    vertical = [m for m in msrs if np.array_equal(m.q, [0.0, 0.0, 1.0])]
    A = (vertical or msrs)[0]
    loc = locate(A, _search_grid(cfg), _array(cfg, A.q), ("fixed", args.rank))
    rows = [(float(x), float(y), float(v)) for (x, y, _), v in zip(loc.grid.points, loc.values)]
    eio.write_csv(os.path.join(out, "imaging_map.csv"), ["x", "y", "value"], rows)
    eio.write_json(os.path.join(out, "location.json"),
                   {"z_hat": [float(v) for v in loc.z_hat], "omega": A.omega,
                    "grid_step": loc.grid.step})
    plot_imaging_map(loc, os.path.join(out, "imaging_map.png"))
    _emit(args, {"z_hat": [float(v) for v in loc.z_hat]})
    return EXIT_OK


def _parse_location(text):
    if os.path.isfile(text):
        return np.asarray(eio.read_json(text)["z_hat"], float)
    try:
        z = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"location must be a JSON file or x,y,z: {text!r}") from exc
    if z.shape != (3,):
        raise ConfigError("location needs three coordinates")
    return z


def cmd_recover(args) -> int:
    from .recovery import recover_cpt, recovered_descriptor

    cfg = _config(args)
    out = _out(args, cfg)
    z_hat = _parse_location(args.location)
    msrs = _read_msrs(args.msr)
    by_omega = {}
    for m in msrs:
        by_omega.setdefault(m.omega, []).append(m)
    recs = []
    for w in sorted(by_omega):
        group = by_omega[w]
        if len(group) != 3:
            raise InconsistentInputs(f"frequency {w} has {len(group)} MSR files, need 3")
        recs.append(recover_cpt(group, z_hat, _array(cfg)))
    for i, r in enumerate(recs):
        eio.write_json(os.path.join(out, f"recovered_f{i:02d}.json"), r.to_dict())
    desc = recovered_descriptor(recs)
    eio.write_json(os.path.join(out, "descriptor.json"), desc.to_dict())
    _emit(args, {"frequencies": len(recs), "residual_max": max(r.residual for r in recs)})
    return EXIT_OK


def cmd_build_dict(args) -> int:
    from .dictionary import table_dictionary
    from .plotting import plot_descriptors

    cfg = _config(args)
    out = _out(args, cfg)
    if args.provenance:
        cfg.dictionary.provenance = args.provenance
    if args.h:
        cfg.dictionary.h = args.h
    if cfg.dictionary.provenance == "paper_table":
        d = table_dictionary()
    elif cfg.dictionary.provenance == "solver":
        d = solver_dictionary(cfg, cfg.frequencies)
    else:
        raise ConfigError("build-dict needs provenance paper_table or solver")
    path = os.path.join(out, args.name)
    eio.atomic_write(path, d.to_json() + "\n")
    rows = [(e.name, i, float(v)) for e in d for i, v in enumerate(e.descriptor.values)]
    eio.write_csv(os.path.join(out, os.path.splitext(args.name)[0] + ".csv"),
                  ["label", "index", "value"], rows)
    plot_descriptors(d, os.path.join(out, os.path.splitext(args.name)[0] + ".png"))
    _emit(args, {"entries": len(d), "path": path})
    return EXIT_OK


def cmd_classify(args) -> int:
    from .dictionary import ClassificationSetup, classify_experiment
    from .plotting import plot_classification

    cfg = _config(args)
    out = _out(args, cfg)
    d = _dictionary(cfg, args)
    cpts = target_cpts(cfg)
    setup = ClassificationSetup(cpts, cfg.frequencies, np.asarray(cfg.target.center, float),
                                _array(cfg), cfg.physics.physical(), d, _search_grid(cfg),
                                cfg.seed_base)
    label = cfg.target.label or None
    res = classify_experiment(setup, cfg.noise_levels, cfg.trials, label, args.jobs)
    eio.write_csv(os.path.join(out, "classification.csv"),
                  ["noise_level", "label", "mean_distance", "accuracy"], res.rows())
    summary = {"best": dict(zip(map(float, res.noise_levels), res.best)),
               "accuracy": [float(a) for a in res.accuracy],
               "failures": res.failures, "trials": res.trials, "true_label": label}
    eio.write_json(os.path.join(out, "classification.json"), summary)
    plot_classification(res, os.path.join(out, "classification.png"))
    _emit(args, {"best": res.best, "accuracy": [float(a) for a in res.accuracy]})
    return EXIT_OK


def cmd_resolve(args) -> int:
    from .forward import plates
    from .localization import Criterion, ResolutionStudy, default_grid_step
    from .plotting import plot_resolution
    from .solver.vie import cpt_sweep

    cfg = _config(args)
    out = _out(args, cfg)
    phys = cfg.physics.physical()
    cpt = cpt_sweep(target_shape(cfg), cfg.resolution.target_h, phys, [phys.omega])[0]
    crit = Criterion(peak_rel=cfg.resolution.peak_rel, dip_rel=cfg.resolution.dip_rel)
    results = []
    for L in cfg.resolution.L_values:
        step = cfg.resolution.grid_step or default_grid_step(L)
        study = ResolutionStudy(cpt, phys, plates(L, cfg.geometry.n_side, cfg.geometry.half_width),
                                step, trials=cfg.trials, seed_base=cfg.seed_base,
                                criterion=crit)
        r = study.run(cfg.noise_levels)
        results.append(r)
        eio.write_csv(os.path.join(out, f"resolution_L{L:g}.csv"),
                      ["noise level"] + [f"{100 * v:g}%" for v in r.noise_levels],
                      [["d_min"] + [float(v) for v in r.d_min]])
    plot_resolution(results, os.path.join(out, "resolution.png"))
    summary = {f"{r.L:g}": {"d_min": [float(v) for v in r.d_min], "slope": _finite_or_none(r.slope()),
                            "monotone": r.monotone} for r in results}
    eio.write_json(os.path.join(out, "resolution.json"), summary)
    _emit(args, summary)
    return EXIT_OK


def cmd_solve_cpt(args) -> int:
    from .solver.vie import cpt_sweep

    cfg = _config(args)
    out = _out(args, cfg)
    if args.shape:
        cfg.target.shape = args.shape
        cfg.target.parameters = {}
    h = args.h or cfg.target.h
    omegas = [float(t) for t in args.omega.split(",")] if args.omega else cfg.frequencies
    cpts = cpt_sweep(target_shape(cfg), h, cfg.physics.physical(), omegas,
                     scale=cfg.target.scale)
    payload = [c.to_dict() for c in cpts]
    eio.write_json(os.path.join(out, "cpt.json"), payload)
    rows = [(c.omega, c.nu, *c.singular_values()[:3]) for c in cpts]
    eio.write_csv(os.path.join(out, "cpt_singular_values.csv"),
                  ["omega", "nu", "s1", "s2", "s3"], rows)
    _emit(args, {"tensors": len(cpts),
                 "singular_values": [[float(v) for v in r[2:]] for r in rows]})
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    ok = all(passed for _, passed, _ in results)
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--out", help="output directory (default: from config)")
    common.add_argument("--seed", type=int, help="override the seed base")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker processes for trial loops")
    common.add_argument("--format", choices=("csv", "json"), default="json",
                        help="format of the summary printed on stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="eddyscope", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write MSR matrices")
    s.add_argument("--noise-level", type=float, help="override the noise level")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("locate", parents=[common], help="MUSIC localization")
    s.add_argument("msr", nargs="+", help="MSR container files")
    s.add_argument("--rank", type=int, default=3, help="signal rank")
    s.set_defaults(func=cmd_locate)

    s = sub.add_parser("recover", parents=[common], help="recover scaled CPTs")
    s.add_argument("msr", nargs="+", help="MSR container files (three per frequency)")
    s.add_argument("--location", required=True, help="location.json or x,y,z")
    s.set_defaults(func=cmd_recover)

    s = sub.add_parser("build-dict", parents=[common], help="build a shape dictionary")
    s.add_argument("--provenance", choices=("paper_table", "solver"))
    s.add_argument("--h", type=float, help="voxel size for solver dictionaries")
    s.add_argument("--name", default="dictionary.json")
    s.set_defaults(func=cmd_build_dict)

    s = sub.add_parser("classify", parents=[common], help="Monte-Carlo classification")
    s.add_argument("--dictionary", help="dictionary JSON overriding the config")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("resolve", parents=[common], help="two-target resolution study")
    s.set_defaults(func=cmd_resolve)

    s = sub.add_parser("solve-cpt", parents=[common], help="CPTs of a voxelized shape")
    s.add_argument("--shape", help="shape kind (overrides the config target)")
    s.add_argument("--h", type=float, help="voxel size")
    s.add_argument("--omega", help="comma separated angular frequencies")
    s.set_defaults(func=cmd_solve_cpt)

    s = sub.add_parser("selftest", parents=[common], help="run invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    # Solver, rank, bisection and input-consistency failures alike.
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EddyscopeError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(err), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
