"""Command-line front end.

    python -m multirestrict.cli {geometry,decompose,partition,estimate} --config C.json --out DIR

Exit codes: 0 success, 1 contract or certificate failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, io
from . import rng as rngmod
from .errors import ConfigError, PartitionFailure, WorkbenchError
from .geometry import FAMILIES, Domain, SurfacePatch, SurfaceSystem

TASKS = ("geometry", "decompose", "partition", "estimate")

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_domain = {
    "type": "object",
    "required": ["center"],
    "properties": {"center": _vec, "radius": {"type": "number", "exclusiveMinimum": 0},
                   "half_widths": {"type": "array", "items": {"type": "number",
                                                              "exclusiveMinimum": 0}}},
    "oneOf": [{"required": ["radius"]}, {"required": ["half_widths"]}],
    "additionalProperties": False,
}
_patch = {
    "type": "object",
    "required": ["ambient_dim", "family", "domain"],
    "properties": {"ambient_dim": {"type": "integer", "minimum": 2},
                   "family": {"enum": sorted(FAMILIES)},
                   "params": {"type": "object"},
                   "domain": _domain,
                   "graph_axis": {"type": "integer"},
                   "name": {"type": "string"}},
    "additionalProperties": False,
}
_patches = {"type": "array", "items": _patch, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["task"],
    "properties": {"task": {"enum": list(TASKS)}, "seed": {"type": "integer", "minimum": 0}},
    "allOf": [
        {"if": {"properties": {"task": {"const": "geometry"}}},
         "then": {"required": ["patches"],
                  "properties": {
                      "task": True, "seed": True, "patches": _patches,
                      "samples": {"type": "integer", "minimum": 2},
                      "curvature_patches": {"type": "array", "items": {"type": "integer",
                                                                       "minimum": 0}},
                      "localization": {"type": "array", "items": {
                          "type": "object", "required": ["patch", "H_perp", "mu"],
                          "properties": {"patch": {"type": "integer", "minimum": 0},
                                         "H_perp": {"type": "array", "items": _vec},
                                         "mu": {"type": "number", "exclusiveMinimum": 0,
                                                "exclusiveMaximum": 1}},
                          "additionalProperties": False}}},
                  "additionalProperties": False}},
        {"if": {"properties": {"task": {"const": "decompose"}}},
         "then": {"required": ["patch", "R", "delta"],
                  "properties": {
                      "task": True, "seed": True, "patch": _patch,
                      "R": {"type": "number", "minimum": 16},
                      "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
                      "h": {"type": "number", "exclusiveMinimum": 0},
                      "kappa": {"type": "number", "exclusiveMinimum": 0},
                      "density": {"enum": ["phases", "gaussian", "zero"]},
                      "orthogonality_trials": {"type": "integer", "minimum": 1},
                      "decay_packets": {"type": "integer", "minimum": 0}},
                  "additionalProperties": False}},
        {"if": {"properties": {"task": {"const": "partition"}}},
         "then": {"required": ["mass", "D"],
                  "properties": {
                      "task": True, "seed": True,
                      "mass": {"oneOf": [
                          {"type": "object", "required": ["kind", "lo", "hi", "count"],
                           "properties": {"kind": {"const": "uniform_box"}, "lo": _vec,
                                          "hi": _vec, "count": {"type": "integer", "minimum": 1}},
                           "additionalProperties": False},
                          {"type": "object", "required": ["kind", "points"],
                           "properties": {"kind": {"const": "points"},
                                          "points": {"type": "array", "items": _vec,
                                                     "minItems": 1},
                                          "weights": {"type": "array", "items": _num}},
                           "additionalProperties": False}]},
                      "D": {"type": "integer", "minimum": 1},
                      "S": {"type": "integer", "minimum": 0},
                      "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                      "starts": {"type": "integer", "minimum": 1}},
                  "additionalProperties": False}},
        {"if": {"properties": {"task": {"const": "estimate"}}},
         "then": {"required": ["patches", "p", "R_schedule"],
                  "properties": {
                      "task": True, "seed": True, "patches": _patches,
                      "p": {"type": "number", "exclusiveMinimum": 0},
                      "R_schedule": {"type": "array", "items": {"type": "number",
                                                                "exclusiveMinimum": 0},
                                     "minItems": 1},
                      "trials": {"type": "integer", "minimum": 1},
                      "families": {"type": "array", "minItems": 1, "items": {
                          "enum": ["random_phases", "focusing", "packet_sparse", "zero"]}},
                      "delta": _num, "delta0": _num, "delta1": _num, "gamma0": _num,
                      "h_factor": {"type": "number", "exclusiveMinimum": 0},
                      "dx": {"type": "number", "exclusiveMinimum": 0},
                      "convergence_guard": {"type": "boolean"}},
                  "additionalProperties": False}},
    ],
}


def pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(cfg, task=None):
    """Raise ConfigError listing every schema violation with its JSON-pointer path."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errs:
        lines = [f"{pointer(e.absolute_path)}: {e.message}" for e in errs]
        raise ConfigError("config schema violation\n  " + "\n  ".join(lines))
    if task is not None and cfg["task"] != task:
        raise ConfigError(f"/task: config is for {cfg['task']!r}, subcommand is {task!r}")


def build_patch(d) -> SurfacePatch:
    dom = d["domain"]
    return SurfacePatch(ambient_dim=d["ambient_dim"], family=d["family"],
                        params=d.get("params", {}),
                        domain=Domain(tuple(dom["center"]), dom.get("radius"),
                                      tuple(dom["half_widths"]) if "half_widths" in dom else None),
                        graph_axis=d.get("graph_axis", -1), name=d.get("name", ""))


# ----------------------------------------------------------------------------
# commands: each returns (exit_code, {filename: payload}) with payload a JSON object,
# ("csv", header, rows) or ("svg", bytes)


def cmd_geometry(cfg, seed):
    from .geometry import normal_localization_submanifold

    system = SurfaceSystem(tuple(build_patch(p) for p in cfg["patches"]))
    samples = cfg.get("samples", 2000)
    curv = cfg.get("curvature_patches", list(range(system.k)) if system.k < system.n else [])
    system = system.certify(samples, curv)
    out = {"k": system.k, "n": system.n, "nu": system.nu, "nu1": system.nu1,
           "nu_sampled": system.certificates["transversality"].min,
           "nu1_sampled": min((c.min for k, c in system.certificates.items()
                               if k.startswith("curvature")), default=None),
           "certificates": {k: c.to_dict() for k, c in sorted(system.certificates.items())}}
    ok = system.nu > 0 and (system.nu1 is None or system.nu1 > 0)
    locs = []
    for spec in cfg.get("localization", []):
        patch = system.patches[spec["patch"]]
        res = normal_localization_submanifold(patch, np.asarray(spec["H_perp"], float), spec["mu"])
        locs.append({"patch": spec["patch"], "mu": spec["mu"], "c_tilde": res.c_tilde,
                     "normal_wedge_min": res.normal_wedge_min, "points": len(res.points),
                     "residual_max": res.residual_max, "jac_min": res.jac_min})
        ok = ok and res.normal_wedge_min > 0
    out["localization"] = locs
    out["passed"] = bool(ok)
    return (0 if ok else 1), {"certificates.json": out}


def cmd_decompose(cfg, seed):
    from .extension import SampledDensity, lattice_indices, random_density
    from .wavepackets import PacketDecomposition, orthogonality_check, packet_decay_check

    patch = build_patch(cfg["patch"])
    R, delta = float(cfg["R"]), float(cfg["delta"])
    h = float(cfg.get("h", R ** -0.5 / 4))
    kind = cfg.get("density", "phases")
    if kind == "zero":
        idx = lattice_indices(patch.domain, h)
        f = SampledDensity(patch, h, idx, np.zeros(len(idx), complex))
    else:
        f = random_density(patch, h, rngmod.stream(seed, "decompose", "density"), kind)
    dec = PacketDecomposition(f, R, delta, kappa=cfg.get("kappa", 4.0))
    rows = []
    recon = dec.reconstruction_error() if f.l2_norm > 0 else 0.0
    rows.append({"check": "reconstruction", "value": recon, "bound": 1e-6,
                 "passed": bool(recon <= 1e-6)})
    if len(dec):
        orth = orthogonality_check(dec, trials=cfg.get("orthogonality_trials", 100),
                                   rng=rngmod.stream(seed, "decompose", "orthogonality"))
        rows.append({"check": "orthogonality", "value": orth.max_ratio, "bound": orth.bound,
                     "passed": bool(orth.passed)})
        order = np.argsort(-dec.norms[dec.ids], kind="stable")
        for pid in dec.ids[order][:cfg.get("decay_packets", 3)]:
            dc = packet_decay_check(dec, int(pid))
            rows.append({"check": f"decay_{int(pid)}", "value": dc.max_exterior,
                         "bound": dc.bound, "monotone": dc.monotone,
                         "by_distance": {str(k): v for k, v in dc.by_distance.items()},
                         "passed": bool(dc.passed)})
    ok = all(r["passed"] for r in rows)
    report = {"summary": dec.summary(), "checks": rows, "passed": ok}
    return (0 if ok else 1), {"decompose.json": report,
                              "packets.csv": ("csv", dec.inventory_header(), dec.to_rows())}


def _mass_from(cfg, seed):
    from .algebraic import Mass

    m = cfg["mass"]
    if m["kind"] == "uniform_box":
        lo, hi = np.asarray(m["lo"], float), np.asarray(m["hi"], float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ConfigError("/mass: need lo < hi with equal lengths")
        g = rngmod.stream(seed, "partition", "mass")
        return Mass.uniform(lo + (hi - lo) * g.random((m["count"], len(lo))))
    X = np.asarray(m["points"], float)
    if X.ndim != 2:
        raise ConfigError("/mass/points: rows must have equal length")
    w = np.asarray(m.get("weights", np.ones(len(X))), float)
    if w.shape != (len(X),) or np.any(w < 0):
        raise ConfigError("/mass/weights: need one nonnegative weight per point")
    return Mass(X, w)


def cmd_partition(cfg, seed):
    from .algebraic import polynomial_partition

    mass = _mass_from(cfg, seed)
    tau = cfg.get("tau", 0.05)
    try:
        P = polynomial_partition(mass, cfg["D"], mass.points.shape[1], tau, S=cfg.get("S"),
                                 rng=rngmod.stream(seed, "partition", "cuts"),
                                 starts=cfg.get("starts", 12))
    except PartitionFailure as e:
        return 1, {"partition.json": {"failed": True, "message": str(e),
                                      "best_imbalance": e.best_imbalance, "tau": tau}}
    hi, lo = P.balance_factor()
    out = P.to_json()
    out["balance"] = {"max_factor": hi, "min_factor": lo}
    rows = [[" ".join(map(str, k)), v] for k, v in sorted(P.cells.items())]
    return 0, {"partition.json": out, "cells.csv": ("csv", ["sign_vector", "mass"], rows)}


def _svg(report, plot_title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "multirestrict"
    fig, ax = plt.subplots(figsize=(5, 4))
    R, A = report.R, report.A
    ok = A > 0
    ax.loglog(R[ok], A[ok], "o", label="A_emp(R)")
    if ok.sum() >= 2:
        ax.loglog(R, np.exp(report.intercept) * R ** report.slope, "-",
                  label=f"slope {report.slope:.3f}")
    ax.set_xlabel("R")
    ax.set_ylabel("A(R)")
    ax.set_title(plot_title)
    ax.legend()
    import io as _io

    buf = _io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def cmd_estimate(cfg, seed, plot=False):
    from .experiments import ExperimentConfig, measure_A

    system = SurfaceSystem(tuple(build_patch(p) for p in cfg["patches"]))
    keys = ("trials", "delta", "delta0", "delta1", "gamma0", "h_factor", "dx",
            "convergence_guard")
    kw = {k: cfg[k] for k in keys if k in cfg}
    if "families" in cfg:
        kw["families"] = tuple(cfg["families"])
    ec = ExperimentConfig(system, float(cfg["p"]), tuple(cfg["R_schedule"]), seed=seed, **kw)
    rep = measure_A(ec)
    fams = list(ec.families)
    rows = [[float(r), float(a)] + [float(rep.per_family[f][i]) for f in fams]
            for i, (r, a) in enumerate(zip(rep.R, rep.A))]
    files = {"estimate.json": rep.to_json(),
             "estimate.csv": ("csv", ["R", "A"] + [f"A_{f}" for f in fams], rows)}
    if plot:
        files["estimate.svg"] = ("svg", _svg(rep, f"p = {ec.p:g}"))
    return 0, files, rep.runtime


# ----------------------------------------------------------------------------


def _write(out, files):
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, payload in sorted(files.items()):
        path = out / name
        if isinstance(payload, tuple) and payload[0] == "csv":
            io.write_csv(path, payload[1], payload[2])
        elif isinstance(payload, tuple) and payload[0] == "svg":
            path.write_bytes(payload[1])
        else:
            io.write_json(path, payload)
        written.append(name)
    return written


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run(task, cfg, out, seed=None, threads=None, plot=False):
    """Validate, execute and persist one task; returns the exit code."""
    validate(cfg, task)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    echo = dict(cfg, seed=seed)
    started = _now()
    runtime = None
    if task == "geometry":
        code, files = cmd_geometry(cfg, seed)
    elif task == "decompose":
        code, files = cmd_decompose(cfg, seed)
    elif task == "partition":
        code, files = cmd_partition(cfg, seed)
    else:
        code, files, runtime = cmd_estimate(cfg, seed, plot)
    files["config.json"] = echo
    written = _write(Path(out), files)
    manifest = {"config_hash": io.config_hash(echo), "tool_version": __version__, "seed": seed,
                "threads": threads, "task": task, "started": started, "finished": _now(),
                "outputs": written, "exit_code": code}
    if runtime is not None:
        manifest["runtime_seconds"] = runtime
    io.write_json(Path(out) / "manifest.json", manifest)
    return code


def _parser():
    ap = argparse.ArgumentParser(prog="multirestrict", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="task", required=True)
    for t in TASKS:
        sp = sub.add_parser(t)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--plot", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read config {args.config}: {e}", file=sys.stderr)
        return 2
    try:
        return run(args.task, cfg, args.out, args.seed, args.threads, args.plot)
    except WorkbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
