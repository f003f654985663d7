"""Command-line entry point.

Subcommands: gen, targets, forward, train-toy, eval, ablate, report, plus
the chamfer / rasterize / heatmap utilities that expose single operations
to external callers. Every command is a pure function of its inputs, flags,
and seed: re-running writes byte-identical artifacts, and each output
directory carries the serialized run configuration and a version stamp.

Exit codes: 0 success, 2 contract violation, 3 I/O or format error,
4 numerical failure (NaN/Inf).
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .camera import make_surround_rig, rig_from_json, rig_to_json
from .errors import (
    ContractError,
    GenerationError,
    IOFormatError,
    NumericalError,
)
from .losses import LossBreakdown, heatmap_loss, matching_losses, ris_loss, total_loss
from .map_core import (
    VectorMap,
    grid_from_dict,
    grid_to_dict,
    instance_from_dict,
    map_from_json,
    map_to_json,
)
from .metrics import EvalConfig, chamfer_distance, evaluate_frames
from .model import ModelConfig, VectorMapModel, toy_config
from .synth import SceneSpec, generate_map, render_features
from .targets import HeatmapTarget, RasterMask, make_heatmap_target, rasterize_instances
from .tensor import backward, load_tensors, save_tensors, zero_grads


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise IOFormatError(f"missing file: {path}") from e
    except json.JSONDecodeError as e:
        raise IOFormatError(f"invalid JSON in {path}: {e}") from e


def _prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise IOFormatError(f"output directory {out} is not empty; "
                            f"pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _write_run_config(out: Path, command: str, payload: dict) -> None:
    doc = {"version": __version__, "command": command, **payload}
    _write_text(out / "run_config.json", _dump_json(doc))


def _load_model_config(path: str | None) -> ModelConfig:
    if path is None:
        return toy_config()
    return ModelConfig.from_dict(_read_json(Path(path)))


def _load_scene_spec(path: str | None, seed: int | None) -> SceneSpec:
    spec = SceneSpec() if path is None else SceneSpec.from_dict(_read_json(Path(path)))
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


def _frame_id(i: int) -> str:
    return f"frame_{i:06d}"


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# scene directory helpers
# ---------------------------------------------------------------------------

def _gen_one_frame(args):
    scenes_dir, spec_dict, cfg_dict, rig_json, index = args
    spec = SceneSpec.from_dict(spec_dict)
    cfg = ModelConfig.from_dict(cfg_dict)
    rig = rig_from_json(rig_json)
    frame_spec = replace(spec, seed=spec.seed + index)
    fid = _frame_id(index)
    gt = generate_map(frame_spec, cfg.grid, frame_id=fid)
    f_pv, f_bev = render_features(gt, rig, cfg.grid, frame_spec,
                                  cfg.feature_hw, cfg.channels, cfg.z_ground)
    frame_dir = Path(scenes_dir) / "frames" / fid
    _write_text(frame_dir / "gt.json", map_to_json(gt))
    save_tensors(frame_dir / "features.bin", {"f_pv": f_pv, "f_bev": f_bev})
    return fid


def load_scenes(scenes_dir: Path):
    """Returns (model config, rig, frame ids) for a generated directory."""
    run_cfg = _read_json(scenes_dir / "run_config.json")
    cfg = ModelConfig.from_dict(run_cfg["model_config"])
    rig = rig_from_json((scenes_dir / "rig.json").read_text(encoding="utf-8"))
    manifest = _read_json(scenes_dir / "manifest.json")
    return cfg, rig, list(manifest["frames"])


def load_frame(scenes_dir: Path, fid: str):
    frame_dir = scenes_dir / "frames" / fid
    try:
        gt = map_from_json((frame_dir / "gt.json").read_text(encoding="utf-8"))
    except IOFormatError as e:
        raise IOFormatError(f"{frame_dir / 'gt.json'}: {e}") from e
    feats = load_tensors(frame_dir / "features.bin")
    return gt, feats["f_pv"], feats["f_bev"]


def cmd_gen(args) -> int:
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    cfg = _load_model_config(args.config)
    spec = _load_scene_spec(args.scene_spec, args.seed)
    rig = make_surround_rig(args.cameras, image_hw=cfg.image_hw,
                            pitch_deg=args.pitch_deg)
    _write_run_config(out, "gen", {
        "model_config": cfg.to_dict(),
        "scene_spec": spec.to_dict(),
        "frames": args.frames,
        "cameras": args.cameras,
        "pitch_deg": args.pitch_deg,
    })
    _write_text(out / "rig.json", rig_to_json(rig))
    _write_text(out / "spec.json", _dump_json(spec.to_dict()))
    _write_text(out / "grid.json", _dump_json(grid_to_dict(cfg.grid)))
    rig_json = rig_to_json(rig)
    work = [(str(out), spec.to_dict(), cfg.to_dict(), rig_json, i)
            for i in range(args.frames)]
    fids = _pmap(_gen_one_frame, work, args.jobs)
    _write_text(out / "manifest.json", _dump_json({"frames": fids}))
    print(f"wrote {len(fids)} frames to {out}")
    return 0


def _targets_one_frame(args):
    scenes_dir, out_dir, fid, sigma, line_width, rig_json, grid_dict = args
    rig = rig_from_json(rig_json)
    grid = grid_from_dict(grid_dict)
    gt, _, _ = load_frame(Path(scenes_dir), fid)
    heat = make_heatmap_target(gt, rig, sigma)
    raster = rasterize_instances(gt, grid, line_width=line_width)
    frame_dir = Path(out_dir) / "frames" / fid
    frame_dir.mkdir(parents=True, exist_ok=True)
    save_tensors(frame_dir / "targets.bin",
                 {"heatmap": heat.heatmap, "raster": raster.mask})
    return fid


def _rig_hash(rig_json: str) -> str:
    import hashlib
    return hashlib.sha256(rig_json.encode("utf-8")).hexdigest()


def cmd_targets(args) -> int:
    scenes = Path(args.scenes)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    cfg, rig, fids = load_scenes(scenes)
    rig_json = rig_to_json(rig)
    sigma = args.sigma if args.sigma is not None else cfg.heatmap_sigma
    width = args.line_width if args.line_width is not None else cfg.line_width
    _write_run_config(out, "targets", {
        "scenes": str(scenes), "sigma": sigma, "line_width": width,
        "grid": grid_to_dict(cfg.grid), "rig_sha256": _rig_hash(rig_json),
    })
    work = [(str(scenes), str(out), fid, sigma, width, rig_json,
             grid_to_dict(cfg.grid)) for fid in fids]
    done = _pmap(_targets_one_frame, work, args.jobs)
    _write_text(out / "manifest.json", _dump_json({"frames": done}))
    print(f"wrote targets for {len(done)} frames to {out}")
    return 0


# ---------------------------------------------------------------------------
# forward / training
# ---------------------------------------------------------------------------

def _frame_losses(model: VectorMapModel, gt: VectorMap, f_pv, f_bev,
                  heat_target: HeatmapTarget | None,
                  raster_target: RasterMask | None) -> LossBreakdown:
    cfg = model.cfg
    out = model.forward(f_pv, f_bev)
    match = matching_losses(out.points, out.class_logits, gt, cfg)
    l_heat = None
    if out.heat_logits is not None and heat_target is not None:
        l_heat = heatmap_loss(out.heat_logits, heat_target,
                              alpha=cfg.heatmap_alpha, beta=cfg.heatmap_beta,
                              binarize=cfg.heatmap_binarize)
    l_ris = None
    if cfg.use_raster_loss and raster_target is not None:
        l_ris = ris_loss(out.points, out.class_logits, raster_target,
                         cfg.grid, cfg.line_width, cfg.fill_closed)
    return total_loss(match.l_cls, match.l_pts, l_heat=l_heat, l_ris=l_ris,
                      gamma_heatmap=cfg.gamma_heatmap,
                      gamma_raster=cfg.gamma_raster)


def _prepare_frames(scenes: Path, fids, model: VectorMapModel):
    frames = []
    for fid in fids:
        gt, f_pv, f_bev = load_frame(scenes, fid)
        heat = make_heatmap_target(gt, model.rig, model.cfg.heatmap_sigma,
                                   model.cfg.z_ground)
        raster = rasterize_instances(gt, model.cfg.grid,
                                     line_width=model.cfg.line_width,
                                     fill_closed=model.cfg.fill_closed)
        frames.append((fid, gt, f_pv, f_bev, heat, raster))
    return frames


def _mean_losses(model, frames) -> dict[str, float]:
    keys = ("total", "heatmap", "raster", "classification", "points", "core")
    acc = {k: 0.0 for k in keys}
    for fid, gt, f_pv, f_bev, heat, raster in frames:
        s = _frame_losses(model, gt, f_pv, f_bev, heat, raster).scalars()
        for k in keys:
            acc[k] += s[k] / len(frames)
    return acc


def train_model(model: VectorMapModel, frames, steps: int, lr: float,
                log_rows: list) -> dict[str, float]:
    """Plain fixed-rate gradient descent, one frame per step, round-robin."""
    params = model.trainable()
    try:
        initial = _mean_losses(model, frames)
    except NumericalError as e:
        raise NumericalError(f"aborted at step 0 (initial evaluation): {e}") from e
    log_rows.append((0, "all", initial))
    for step in range(1, steps + 1):
        fid, gt, f_pv, f_bev, heat, raster = frames[(step - 1) % len(frames)]
        try:
            breakdown = _frame_losses(model, gt, f_pv, f_bev, heat, raster)
            zero_grads(params)
            backward(breakdown.total)
        except NumericalError as e:
            raise NumericalError(f"aborted at step {step}: {e}") from e
        for p in params:
            if p.grad is not None:
                p.data = p.data - lr * p.grad
        log_rows.append((step, fid, breakdown.scalars()))
    final = _mean_losses(model, frames)
    log_rows.append((steps, "all", final))
    return {"initial": initial, "final": final}


def _write_loss_log(path: Path, rows) -> None:
    lines = ["step,frame,total,heatmap,raster,classification,points,core"]
    for step, fid, s in rows:
        lines.append(f"{step},{fid},{s['total']!r},{s['heatmap']!r},"
                     f"{s['raster']!r},{s['classification']!r},"
                     f"{s['points']!r},{s['core']!r}")
    _write_text(path, "\n".join(lines) + "\n")


def _predict_frames(model: VectorMapModel, frames, out_dir: Path) -> list:
    pairs = []
    for fid, gt, f_pv, f_bev, _, _ in frames:
        out = model.forward(f_pv, f_bev)
        pred = model.predict_map(out, frame_id=fid)
        _write_text(out_dir / "frames" / fid / "pred.json", map_to_json(pred))
        pairs.append((pred, gt))
    return pairs


def cmd_forward(args) -> int:
    scenes = Path(args.scenes)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    cfg, rig, fids = load_scenes(scenes)
    model = VectorMapModel(cfg, rig)
    if args.ckpt:
        model.load(Path(args.ckpt))
    _write_run_config(out, "forward", {
        "scenes": str(scenes), "ckpt": args.ckpt,
        "model_config": cfg.to_dict(),
    })
    frames = _prepare_frames(scenes, fids, model)
    _predict_frames(model, frames, out)
    _write_text(out / "manifest.json", _dump_json({"frames": fids}))
    print(f"wrote predictions for {len(fids)} frames to {out}")
    return 0


def cmd_train_toy(args) -> int:
    scenes = Path(args.scenes)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    cfg, rig, fids = load_scenes(scenes)
    if args.frames is not None:
        fids = fids[:args.frames]
    if not fids:
        raise ContractError("no frames to train on")
    model = VectorMapModel(cfg, rig)
    if args.ckpt:
        model.load(Path(args.ckpt))
    _write_run_config(out, "train-toy", {
        "scenes": str(scenes), "steps": args.steps, "lr": args.lr,
        "ckpt": args.ckpt, "frames": fids, "model_config": cfg.to_dict(),
    })
    model.save(out / "model_init.bin")
    frames = _prepare_frames(scenes, fids, model)
    log_rows: list = []
    summary = train_model(model, frames, args.steps, args.lr, log_rows)
    _write_loss_log(out / "loss_log.csv", log_rows)
    model.save(out / "model.bin")
    pairs = _predict_frames(model, frames, out / "preds")
    report = evaluate_frames(pairs, EvalConfig())
    _write_text(out / "report.json", report.to_json())
    summary["map_coarse"] = report.map_coarse
    summary["map_tight"] = report.map_tight
    _write_text(out / "summary.json", _dump_json(summary))
    print(f"initial total {summary['initial']['total']:.6f} -> "
          f"final {summary['final']['total']:.6f}; "
          f"mAP {report.map_coarse:.3f} / mAP_T {report.map_tight:.3f}")
    return 0


ABLATION_ROWS = (
    ("baseline", dict(use_instance_activation=False, use_dual_embedding=False,
                      use_raster_loss=False)),
    ("activation", dict(use_instance_activation=True,
                        use_dual_embedding=False, use_raster_loss=False)),
    ("dual_embedding", dict(use_instance_activation=False,
                            use_dual_embedding=True, use_raster_loss=False)),
    ("activation+dual_embedding", dict(use_instance_activation=True,
                                       use_dual_embedding=True,
                                       use_raster_loss=False)),
    ("raster_loss", dict(use_instance_activation=False,
                         use_dual_embedding=False, use_raster_loss=True)),
    ("full", dict(use_instance_activation=True, use_dual_embedding=True,
                  use_raster_loss=True)),
)


def cmd_ablate(args) -> int:
    scenes = Path(args.scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg, rig, fids = load_scenes(scenes)
    if args.frames is not None:
        fids = fids[:args.frames]
    rows = [r for r in ABLATION_ROWS
            if args.rows is None or r[0] in args.rows.split(",")]
    summary = {}
    for name, flags in rows:
        row_dir = out / "rows" / name
        row_summary = row_dir / "summary_row.json"
        if row_summary.exists() and not args.force:
            summary[name] = _read_json(row_summary)
            print(f"{name}: reused completed row")
            continue
        row_cfg = replace(cfg, **flags)
        model = VectorMapModel(row_cfg, rig)
        frames = _prepare_frames(scenes, fids, model)
        log_rows: list = []
        res = train_model(model, frames, args.steps, args.lr, log_rows)
        row_dir.mkdir(parents=True, exist_ok=True)
        _write_loss_log(row_dir / "loss_log.csv", log_rows)
        model.save(row_dir / "model.bin")
        pairs = _predict_frames(model, frames, row_dir / "preds")
        report = evaluate_frames(pairs, EvalConfig())
        res["map_coarse"] = report.map_coarse
        res["map_tight"] = report.map_tight
        _write_text(row_summary, _dump_json(res))
        summary[name] = res
        print(f"{name}: core {res['final']['core']:.6f} "
              f"mAP {report.map_coarse:.3f}")
    _write_run_config(out, "ablate", {
        "scenes": str(scenes), "steps": args.steps, "lr": args.lr,
        "rows": [r[0] for r in rows], "model_config": cfg.to_dict(),
    })
    _write_text(out / "summary.json", _dump_json(summary))
    lines = ["row,initial_core,final_core,final_total,map_coarse,map_tight"]
    for name, res in summary.items():
        lines.append(f"{name},{res['initial']['core']!r},"
                     f"{res['final']['core']!r},{res['final']['total']!r},"
                     f"{res['map_coarse']!r},{res['map_tight']!r}")
    _write_text(out / "summary.csv", "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _load_eval_pairs(pred_dir: Path, gt_dir: Path):
    gt_frames = sorted(p.name for p in (gt_dir / "frames").iterdir()
                       if (p / "gt.json").exists())
    if not gt_frames:
        raise IOFormatError(f"no frames with gt.json under {gt_dir}")
    pairs = []
    for fid in gt_frames:
        gt = map_from_json((gt_dir / "frames" / fid / "gt.json")
                           .read_text(encoding="utf-8"))
        pred_path = pred_dir / "frames" / fid / "pred.json"
        if not pred_path.exists():
            fallback = pred_dir / "frames" / fid / "gt.json"
            if fallback.exists():
                pred_path = fallback
            else:
                print(f"warning: no prediction for {fid}; counted as empty",
                      file=sys.stderr)
                pairs.append((VectorMap(frame_id=fid), gt))
                continue
        pred = map_from_json(pred_path.read_text(encoding="utf-8"))
        pairs.append((pred, gt))
    return pairs


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    cfg = EvalConfig(matching=args.matching, n_eval_points=args.n_eval_points)
    pairs = _load_eval_pairs(pred_dir, gt_dir)
    report = evaluate_frames(pairs, cfg)
    out = Path(args.out)
    _write_text(out, report.to_json())
    if args.csv:
        _write_text(Path(args.csv), report.to_csv())
    print(f"mAP {report.map_coarse:.4f} mAP_T {report.map_tight:.4f} "
          f"over {report.n_frames} frames")
    return 0


def cmd_report(args) -> int:
    doc = _read_json(Path(args.report))
    print(f"frames: {doc['n_frames']}")
    header = f"{'category':<10} {'set':<7} " + " ".join(
        f"{'AP@' + t:<9}" for t in sorted(
            doc["per_category"][next(iter(doc["per_category"]))]["ap_coarse"]))
    print(header)
    for name, cat in sorted(doc["per_category"].items()):
        for set_name in ("ap_coarse", "ap_tight"):
            aps = " ".join(f"{v:<9.4f}" for _, v in sorted(cat[set_name].items()))
            tag = "" if cat["included"] else " (excluded)"
            print(f"{name:<10} {set_name[3:]:<7} {aps} "
                  f"mean {cat[set_name + '_mean']:.4f}{tag}")
    print(f"mAP {doc['map_coarse']:.4f}  mAP_T {doc['map_tight']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# single-operation utilities (the surface used by the external bindings)
# ---------------------------------------------------------------------------

def cmd_chamfer(args) -> int:
    a = instance_from_dict(_read_json(Path(args.a)))
    b = instance_from_dict(_read_json(Path(args.b)))
    print(repr(chamfer_distance(a, b, args.n_eval_points)))
    return 0


def cmd_rasterize(args) -> int:
    vmap = map_from_json(Path(args.map).read_text(encoding="utf-8"))
    grid = grid_from_dict(_read_json(Path(args.grid)))
    mask = rasterize_instances(vmap, grid, line_width=args.width,
                               use_confidence=args.use_confidence)
    save_tensors(Path(args.out), {"raster": mask.mask})
    return 0


def cmd_heatmap(args) -> int:
    vmap = map_from_json(Path(args.map).read_text(encoding="utf-8"))
    rig = rig_from_json(Path(args.rig).read_text(encoding="utf-8"))
    target = make_heatmap_target(vmap, rig, args.sigma)
    save_tensors(Path(args.out), {"heatmap": target.heatmap})
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vecmap",
        description="vectorized map construction toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scene bundles")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="model config JSON (default: toy shapes)")
    p.add_argument("--scene-spec", help="scene spec JSON")
    p.add_argument("--cameras", type=int, default=2)
    p.add_argument("--pitch-deg", type=float, default=25.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("targets", help="materialize supervision targets")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--line-width", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_targets)

    p = sub.add_parser("forward", help="run the model over scene frames")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_forward)

    p = sub.add_parser("train-toy", help="gradient-descent overfit on frames")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.012)
    p.add_argument("--frames", type=int, default=None,
                   help="train on the first K frames only")
    p.add_argument("--ckpt", help="start from this checkpoint")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("eval", help="Chamfer-AP evaluation of predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--matching", default="greedy",
                   choices=("greedy", "hungarian"))
    p.add_argument("--n-eval-points", type=int, default=100)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train/eval the stage-toggle matrix")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--rows", help="comma-separated row names to run")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="pretty-print an evaluation report")
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("chamfer", help="Chamfer distance of two instances")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--n-eval-points", type=int, default=100)
    p.set_defaults(fn=cmd_chamfer)

    p = sub.add_parser("rasterize", help="rasterize a map JSON onto a grid")
    p.add_argument("--map", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--width", type=int, default=1)
    p.add_argument("--use-confidence", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rasterize)

    p = sub.add_parser("heatmap", help="keypoint heatmap target for a map")
    p.add_argument("--map", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GenerationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (IOFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
