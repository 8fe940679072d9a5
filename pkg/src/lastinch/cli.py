"""Command-line harness.

Each stage reads the artifacts of the previous one from ``--out`` and writes
its own next to them::

    scene/{cloud.ply,labels.json,meta.json}, demo/demo_log.jsonl   gen-data
    demo/trajectory.jsonl                                          parse-demo
    predict/pose9d.json                                            predict
    target/{full.jsonl,target.jsonl,correspondence.csv,info.json}  reproject
    results.csv, traces/<scenario>_<seed>_<policy>.jsonl           run
    summary.csv, summary.txt                                       report

``run`` fills in any missing parse-demo/predict/reproject artifacts itself,
so ``gen-data`` then ``run`` then ``report`` is a complete pipeline. Failures
print a JSON object ``{"error", "type", "exit_code"}`` on stderr and exit with
the code carried by the exception class.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import POLICIES, UNIT_SUFFIXES, VECTOR_KEYS, ScenarioConfig, builtin_config_dir, dump_config, load_config
from .catbc import write_trace
from .correspond import load_correspondence, save_correspondence
from .demo import load_demo_log, load_trajectory, parse_demo, save_demo_log, save_trajectory
from .errors import ConfigError, LastInchError, MissingArtifact
from .geom import Pose, load_points
from .simgen import BUILTIN_CATEGORIES, Camera, SyntheticScene, write_scene
from .shapes import make_mesh

RESULT_FIELDS = ("scenario", "instance", "seed", "policy", "success", "ticks", "final_err_mm", "final_err_deg",
                 "error")
SUMMARY_FIELDS = ("scenario", "instance", "policy", "successes", "runs", "success_rate", "mean_err_mm")


# ---------------------------------------------------------------------------
# config and artifact helpers


def resolve_config(path, out=None) -> ScenarioConfig:
    """``path`` may be a file, the name of a built-in config, or omitted when ``out/config.cfg`` exists."""
    if path is None:
        if out is not None and (Path(out) / "config.cfg").exists():
            return load_config(Path(out) / "config.cfg")
        raise ConfigError("no --config given and no config.cfg in the output directory")
    p = Path(path)
    if not p.exists():
        for cand in (builtin_config_dir() / p.name, builtin_config_dir() / f"{p.name}.cfg"):
            if cand.exists():
                return load_config(cand)
    return load_config(p)


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _read_json(path):
    return json.loads(_require(path).read_text())


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_scene(cfg, scene_dir, with_partial=True) -> SyntheticScene:
    """Scene truth from ``meta.json``; the mesh is rebuilt from the config and must match the recorded instance."""
    meta = _read_json(Path(scene_dir) / "meta.json")
    if meta["instance_id"] != cfg.model_id or not np.allclose(meta["scales"], cfg.scales, rtol=0, atol=1e-15):
        raise ConfigError(f"{scene_dir} holds {meta['instance_id']} {meta['scales']}, config asks for "
                          f"{cfg.model_id} {list(cfg.scales)}")
    spec = BUILTIN_CATEGORIES[cfg.category]
    mesh = make_mesh(spec["shape"], **pipeline.model_dims(cfg, cfg.model_id, cfg.scales))
    partial = load_points(_require(Path(scene_dir) / "cloud.ply")) if with_partial else None
    cam = meta["camera"]
    camera = Camera(Pose.from_dict(cam["pose"]), cam["width"], cam["height"], cam["fx"], cam["fy"],
                    cam["cx"], cam["cy"])
    return SyntheticScene(mesh, Pose.from_dict(meta["pose"]), meta["table_height"], camera, partial,
                          meta["instance_id"], np.asarray(meta["scales"], dtype=float), meta["rest_index"],
                          meta["yaw"], meta["dropout"], meta["seed"])


# ---------------------------------------------------------------------------
# stages


def cmd_gen_data(cfg, out):
    out = Path(out)
    (out / "demo").mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    save_demo_log(pipeline.make_demo_log(cfg), out / "demo" / "demo_log.jsonl")
    err = write_scene(pipeline.make_scene(cfg), out / "scene")
    return {"label_residual": err}


def cmd_parse_demo(cfg, out, log=None):
    out = Path(out)
    traj = parse_demo(load_demo_log(_require(log or out / "demo" / "demo_log.jsonl")))
    (out / "demo").mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "demo" / "trajectory.jsonl")
    return {"waypoints": len(traj)}


def cmd_predict(cfg, out):
    out = Path(out)
    scene = load_scene(cfg, out / "scene")
    est = pipeline.estimate(cfg, scene.partial, truth=(scene.pose, scene.mesh.bounds()),
                            viewpoint=scene.camera.pose.t)
    (out / "predict").mkdir(parents=True, exist_ok=True)
    _write_json(out / "predict" / "pose9d.json", est.to_dict())
    return {"template": est.template_id, "extents": est.pose9d.extents.tolist()}


def _load_estimate(out):
    return pipeline.Estimate.from_dict(_read_json(Path(out) / "predict" / "pose9d.json"))


def cmd_reproject(cfg, out):
    out = Path(out)
    demo_traj = load_trajectory(_require(out / "demo" / "trajectory.jsonl"))
    rep = pipeline.reproject(cfg, demo_traj, _load_estimate(out))
    tdir = out / "target"
    tdir.mkdir(parents=True, exist_ok=True)
    save_trajectory(rep.full, tdir / "full.jsonl")
    save_trajectory(rep.target, tdir / "target.jsonl")
    save_correspondence(rep.corr, tdir / "correspondence.csv")
    _write_json(tdir / "info.json", {"keypose_index": rep.keypose_index, "anchors": [list(a) for a in rep.anchors],
                                     "n_novel": rep.corr.n_novel, "policy": cfg.policy})
    return {"keypose_index": rep.keypose_index, "subgoals": len(rep.target)}


def load_prepared(cfg, out) -> pipeline.Prepared:
    """Rebuild the in-memory scenario from the artifacts under ``out``."""
    out = Path(out)
    tdir = out / "target"
    info = _read_json(tdir / "info.json")
    if info["policy"] != cfg.policy and "centroid" in (info["policy"], cfg.policy):
        raise ConfigError("target was reprojected for a different anchoring mode; rerun reproject")
    est = _load_estimate(out)
    novel_pts, _ = pipeline.canonical_points(cfg, est.template_id, est.pose9d.extents)
    rep = pipeline.Reprojection(load_trajectory(_require(tdir / "full.jsonl")),
                                load_trajectory(_require(tdir / "target.jsonl")), info["keypose_index"],
                                [tuple(a) for a in info["anchors"]],
                                load_correspondence(_require(tdir / "correspondence.csv"), info["n_novel"]),
                                novel_pts)
    demo_traj = load_trajectory(_require(out / "demo" / "trajectory.jsonl"))
    return pipeline.assemble(cfg, load_scene(cfg, out / "scene", with_partial=False), est, demo_traj, rep)


def _result_row(cfg, outcome):
    return {**outcome.row(), "instance": cfg.model_id, "error": outcome.error}


def write_results(path, rows):
    rows = sorted(rows, key=lambda r: (r["scenario"], int(r["seed"]), r["policy"]))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(RESULT_FIELDS) + [k for k in rows[0] if k not in RESULT_FIELDS]
                           if rows else RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_run(cfg, out, jobs=1, policies=None):
    out = Path(out)
    _require(out / "scene" / "meta.json")
    _require(out / "demo" / "demo_log.jsonl")
    if not (out / "demo" / "trajectory.jsonl").exists():
        cmd_parse_demo(cfg, out)
    if not (out / "predict" / "pose9d.json").exists():
        cmd_predict(cfg, out)
    if not (out / "target" / "info.json").exists():
        cmd_reproject(cfg, out)
    policies = policies or [cfg.policy]
    if (cfg.policy == "centroid") != ("centroid" in policies) or (cfg.policy == "centroid" and len(policies) > 1):
        raise ConfigError("the centroid diagnostic needs its own target; set policy = centroid in the config")
    prep = load_prepared(cfg, out)
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    rows = []
    for policy in policies:
        for o in pipeline.run_seeds(prep, pipeline.seeds_for(cfg), policy, cfg, jobs):
            write_trace(o.result, tdir / f"{o.scenario}_{o.seed}_{o.policy}.jsonl")
            rows.append(_result_row(cfg, o))
    write_results(out / "results.csv", rows)
    return {p: sum(int(r["success"]) for r in rows if r["policy"] == p) / cfg.runs for p in policies}


def read_results(paths):
    rows = []
    for p in paths:
        with open(_require(p), newline="") as fh:
            rows.extend(csv.DictReader(fh))
    return rows


def summarize(rows, extra_keys=()):
    """Per (scenario, instance, policy, *extra_keys) success counts in first-seen order of sorted keys."""
    keys = ("scenario", "instance", "policy") + tuple(extra_keys)
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k, "") for k in keys), []).append(r)
    out = []
    for key in sorted(groups):
        g = groups[key]
        n, k = len(g), sum(int(r["success"]) for r in g)
        errs = [float(r["final_err_mm"]) for r in g]
        out.append({**dict(zip(keys, key)), "successes": k, "runs": n, "success_rate": f"{100.0 * k / n:.1f}%",
                    "mean_err_mm": f"{sum(errs) / n:.3f}"})
    return out


def format_table(summary):
    if not summary:
        return "(no results)\n"
    cols = list(summary[0])
    cells = [cols] + [[str(r[c]) for c in cols] for r in summary]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    numeric = {"seed", "successes", "runs", "success_rate", "mean_err_mm"}
    lines = []
    for j, row in enumerate(cells):
        parts = [v.rjust(w) if cols[i] in numeric else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(parts).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(out, results=None, extra_keys=()):
    out = Path(out)
    paths = results or [out / "results.csv"]
    summary = summarize(read_results(paths), extra_keys)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]) if summary else SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    table = format_table(summary)
    (out / "summary.txt").write_text(table)
    return table


def parse_assignment(text):
    """``key=v1,v2`` with an optional ``_mm``/``_deg`` suffix on the key; returns (field, [values])."""
    if "=" not in text:
        raise ConfigError(f"--set expects key=v1,v2,..., got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    base, scale = key, 1.0
    for suffix, factor in UNIT_SUFFIXES.items():
        if key.endswith(suffix):
            base, scale = key[: -len(suffix)], factor
    defaults = {f: getattr(ScenarioConfig(), f) for f in ScenarioConfig.__dataclass_fields__}
    if base not in defaults or base in ("name", "task", "category"):
        raise ConfigError(f"cannot sweep {key!r}")
    values = []
    for v in raw.split(","):
        v = v.strip()
        try:
            if base in VECTOR_KEYS:
                values.append(tuple(float(x) * scale for x in v.split()))
            elif isinstance(defaults[base], bool) or not isinstance(defaults[base], (int, float)):
                values.append(v)
            elif isinstance(defaults[base], int) and scale == 1.0:
                values.append(int(v))
            else:
                values.append(float(v) * scale)
        except ValueError:
            raise ConfigError(f"--set {key}: cannot interpret {v!r}") from None
    return base, key, values


def cmd_sweep(cfg, out, assignments, policies=None, jobs=1):
    """Grid over ``--set`` values; each cell is prepared in memory and run on the config's seeds."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    parsed = [parse_assignment(a) for a in assignments]
    policies = policies or [cfg.policy]
    rows = []
    for combo in itertools.product(*[vals for _, _, vals in parsed]):
        over = {base: v for (base, _, _), v in zip(parsed, combo)}
        cell = cfg.with_overrides(**over)
        prep = pipeline.prepare(cell)
        labels = {key: raw_label(v, key) for (_, key, _), v in zip(parsed, combo)}
        for policy in policies:
            for o in pipeline.run_seeds(prep, pipeline.seeds_for(cell), policy, cell, jobs):
                rows.append({**_result_row(cell, o), **labels})
    rows.sort(key=lambda r: tuple(str(r[k]) for _, k, _ in parsed))
    with open(out / "sweep.csv", "w", newline="") as fh:
        fields = list(RESULT_FIELDS) + [k for _, k, _ in parsed]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return cmd_report(out, [out / "sweep.csv"], [k for _, k, _ in parsed])


def raw_label(value, key):
    """Value back in the units the user typed."""
    scale = next((f for s, f in UNIT_SUFFIXES.items() if key.endswith(s)), 1.0)
    if isinstance(value, tuple):
        return " ".join(f"{v / scale:g}" for v in value)
    if isinstance(value, float):
        return f"{value / scale:g}"
    return str(value)


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file or built-in config name")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for batch runs")

    ap = argparse.ArgumentParser(prog="lastinch", description="Category-level last-inch manipulation harness.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="demo log and novel-instance scan")
    p = sub.add_parser("parse-demo", parents=[common], help="demo log -> receptacle-frame trajectory")
    p.add_argument("--log", help="demo log (default: OUT/demo/demo_log.jsonl)")
    sub.add_parser("predict", parents=[common], help="9D pose of the novel instance")
    sub.add_parser("reproject", parents=[common], help="target trajectory for the novel instance")
    p = sub.add_parser("run", parents=[common], help="seeded trials -> results.csv and traces")
    p.add_argument("--policies", help="comma-separated policies (default: the config's)")
    p = sub.add_parser("report", parents=[common], help="success-rate tables")
    p.add_argument("results", nargs="*", help="results CSV files (default: OUT/results.csv)")
    p = sub.add_parser("sweep", parents=[common], help="grid of config overrides")
    p.add_argument("--set", dest="assign", action="append", default=[], metavar="KEY=V1,V2",
                   help="swept key; repeat for a grid")
    p.add_argument("--policies", help="comma-separated policies (default: the config's)")
    return ap


def _policies(text):
    if not text:
        return None
    out = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in out if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown policies {bad}")
    return out


def dispatch(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.command == "report":
        sys.stdout.write(cmd_report(args.out, args.results or None))
        return None
    cfg = resolve_config(args.config, args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(seed=args.seed)
    if args.command == "gen-data":
        return cmd_gen_data(cfg, args.out)
    if args.command == "parse-demo":
        return cmd_parse_demo(cfg, args.out, args.log)
    if args.command == "predict":
        return cmd_predict(cfg, args.out)
    if args.command == "reproject":
        return cmd_reproject(cfg, args.out)
    if args.command == "run":
        return cmd_run(cfg, args.out, args.jobs, _policies(args.policies))
    if not args.assign:
        raise ConfigError("sweep needs at least one --set")
    sys.stdout.write(cmd_sweep(cfg, args.out, args.assign, _policies(args.policies), args.jobs))
    return None


def error_payload(exc):
    code = getattr(exc, "exit_code", 1) if isinstance(exc, LastInchError) else 1
    return {"error": str(exc), "type": type(exc).__name__, "exit_code": code}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        info = dispatch(args)
    except Exception as exc:
        payload = error_payload(exc)
        sys.stderr.write(json.dumps(payload) + "\n")
        return payload["exit_code"]
    if info is not None:
        sys.stdout.write(json.dumps(info, sort_keys=True, default=_json_default) + "\n")
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o).__name__)


if __name__ == "__main__":
    sys.exit(main())
