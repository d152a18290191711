"""Command-line entry point: ``frontview <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .core import ClassId, PointCloud
from .evaluation import evaluate_all, report_table, report_to_json
from .fvproj import build_front_view_map, render_map, save_map, upscale_nearest, write_ppm
from .kittio import (Calibration, SceneSpec, gen_synthetic_scene, ground_truth_to_labels, labels_to_ground_truth,
                     read_detections, read_labels, read_velodyne, write_detections, write_labels, write_velodyne)
from .nnet.penet import PENet, PENetConfig, SizeTemplate, templates_from_boxes
from .nnet.pgnet import PGNet, PGNetConfig
from .nnet.train import load_checkpoint, save_checkpoint, train, write_trace
from .pipeline import Detector, Scene, benchmark, gt_map_boxes, make_pe_samples, make_pg_samples, pe_loss_fn, \
    pg_loss_fn
from .proposal import AnchorPrior, cluster_anchors, read_anchors, write_anchors

log = logging.getLogger("frontview")


class CliError(Exception):
    pass


# ------------------------------------------------------------------ dataset


def sample_ids(data: Path) -> list[str]:
    vdir = data / "velodyne"
    if not vdir.is_dir():
        raise CliError(f"{data}: no velodyne/ directory")
    return sorted(p.stem for p in vdir.glob("*.bin"))


def calib_for(data: Path, sid: str) -> Calibration:
    p = data / "calib" / f"{sid}.txt"
    return Calibration.read(p) if p.exists() else Calibration()


def load_scenes(data: Path, with_labels: bool = True) -> list[Scene]:
    out = []
    for sid in sample_ids(data):
        cloud = read_velodyne(data / "velodyne" / f"{sid}.bin")
        gts = []
        if with_labels:
            lp = data / "label_2" / f"{sid}.txt"
            if not lp.exists():
                raise CliError(f"missing label file {lp}")
            gts = labels_to_ground_truth(read_labels(lp), sid, calib_for(data, sid))
        out.append(Scene(sid, cloud, gts))
    return out


def anchors_meta(priors) -> list:
    return [[p.p_w, p.p_h, p.scale_index] for p in priors]


def load_pgnet(path):
    params, meta = load_checkpoint(path)
    net = PGNet(PGNetConfig.from_dict(meta["config"]))
    priors = [AnchorPrior(float(w), float(h), int(s)) for w, h, s in meta["anchors"]]
    return net, params, priors


def load_penet(path):
    params, meta = load_checkpoint(path)
    net = PENet(PENetConfig.from_dict(meta["config"]))
    tmpl = [SizeTemplate(ClassId.parse(c), h, w, l) for c, h, w, l in meta["templates"]]
    return net, params, tmpl


def _train(params, samples, loss_fn, section, args, trace_path):
    tc = cfgmod.train_config(section, args.threads)
    if args.steps is not None:
        tc.steps = args.steps
    res = train(params, samples, loss_fn, tc, seed=args.seed)
    if trace_path:
        write_trace(trace_path, res.trace)
    return res


# ------------------------------------------------------------------ commands


def cmd_synth(args, cfg):
    spec_d = json.loads(Path(args.spec).read_text())
    n = args.scenes if args.scenes is not None else int(spec_d.get("num_scenes", 1))
    out = Path(args.out)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "label_2").mkdir(parents=True, exist_ok=True)
    proj = cfgmod.projection_config(cfg)
    base = SceneSpec.from_dict(spec_d, proj)
    for i in range(n):
        spec = SceneSpec.from_dict({**spec_d, "seed": base.seed + i}, proj)
        cloud, gts = gen_synthetic_scene(spec)
        sid = f"{i:06d}"
        write_velodyne(out / "velodyne" / f"{sid}.bin", cloud)
        write_labels(out / "label_2" / f"{sid}.txt", ground_truth_to_labels(gts, proj))
    print(f"wrote {n} scenes to {out}")


def cmd_project(args, cfg):
    proj = cfgmod.projection_config(cfg)
    cloud = read_velodyne(args.bin)
    fv = build_front_view_map(cloud, proj, workers=args.threads)
    if args.upscaled:
        fv = upscale_nearest(fv, proj.upscaled_height, proj.upscaled_width)
    save_map(args.out, fv)
    if args.ppm:
        write_ppm(args.ppm, render_map(fv))
    print(json.dumps(fv.stats))


def cmd_anchors(args, cfg):
    proj = cfgmod.projection_config(cfg)
    scenes = load_scenes(Path(args.data))
    wh = [(p.b_w, p.b_h) for sc in scenes for p in gt_map_boxes(sc.gts, proj)]
    k = args.k or cfg["proposal"]["n_anchors"]
    n_scales = len(cfg["pgnet"]["strides"])
    priors = cluster_anchors(wh, k, args.seed, n_scales)
    write_anchors(args.out, priors)
    print(f"wrote {len(priors)} anchors to {args.out}")


def cmd_train_pgnet(args, cfg):
    proj = cfgmod.projection_config(cfg)
    scenes = load_scenes(Path(args.data))
    priors = read_anchors(args.anchors)
    net = PGNet(PGNetConfig.from_dict(cfg["pgnet"]))
    params = net.init(np.random.default_rng(args.seed))
    samples = make_pg_samples(scenes, priors, net.cfg.strides, proj, net.cfg.n_class, cfg["proposal"]["ignore_iou"])
    res = _train(params, samples, pg_loss_fn(net, cfgmod.loss_weights(cfg)), cfg["train_pgnet"], args, args.trace)
    save_checkpoint(args.out, res.params, {"kind": "pgnet", "config": net.cfg.to_dict(),
                                           "anchors": anchors_meta(priors), "seed": args.seed})
    print(f"final loss {res.trace[-1].total:.6f}; checkpoint {args.out}")


def cmd_train_penet(args, cfg):
    proj = cfgmod.projection_config(cfg)
    scenes = load_scenes(Path(args.data))
    crop = cfgmod.crop_config(cfg)
    proposals = None
    if args.pgnet:
        pg, pg_params, priors = load_pgnet(args.pgnet)
        det = Detector(pg, pg_params, priors, None, None, [], proj, cfgmod.detect_config(cfg))
        proposals = {}
        for sc in scenes:
            ps, _ = det.propose(sc.cloud)
            proposals[sc.sample] = [(tuple(b), r1, r2) for b, r1, r2 in zip(ps.boxes, ps.r1, ps.r2)]
    samples = make_pe_samples(scenes, proj, crop, args.seed, cfg["frustum"]["copies"], proposals)
    if not samples:
        raise CliError("no object crops found in the training data")
    gts = [g for sc in scenes for g in sc.gts if not g.dont_care]
    tmpl = templates_from_boxes([g.box for g in gts], [g.cls for g in gts])
    pcfg = PENetConfig.from_dict({**cfg["penet"], "n_size": len(tmpl)})
    net = PENet(pcfg)
    params = net.init(np.random.default_rng(args.seed + 1))
    res = _train(params, samples, pe_loss_fn(net, tmpl), cfg["train_penet"], args, args.trace)
    save_checkpoint(args.out, res.params, {"kind": "penet", "config": pcfg.to_dict(), "seed": args.seed,
                                           "templates": [[t.cls.value, t.h, t.w, t.l] for t in tmpl]})
    print(f"final loss {res.trace[-1].total:.6f}; checkpoint {args.out}")


def make_detector(args, cfg) -> Detector:
    pg, pg_params, priors = load_pgnet(args.pgnet)
    pe, pe_params, tmpl = load_penet(args.penet)
    return Detector(pg, pg_params, priors, pe, pe_params, tmpl, cfgmod.projection_config(cfg),
                    cfgmod.detect_config(cfg))


def cmd_detect(args, cfg):
    det = make_detector(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.bin:
        jobs = [(Path(args.bin).stem, Path(args.bin), Calibration())]
    else:
        data = Path(args.data)
        jobs = [(sid, data / "velodyne" / f"{sid}.bin", calib_for(data, sid)) for sid in sample_ids(data)]

    def run(job):
        sid, path, calib = job
        dets = det.detect(read_velodyne(path), sid, seed=args.seed)
        write_detections(out / f"{sid}.txt", dets, det.proj_cfg, calib)
        return len(dets)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            counts = list(pool.map(run, jobs))
    else:
        counts = [run(j) for j in jobs]
    print(f"wrote {sum(counts)} detections for {len(jobs)} samples to {out}")


def cmd_eval(args, cfg):
    gdir, ddir = Path(args.gts), Path(args.dets)
    gts, dets = [], []
    lab_dir = gdir / "label_2" if (gdir / "label_2").is_dir() else gdir
    sids = sorted(p.stem for p in lab_dir.glob("*.txt"))
    if not sids:
        raise CliError(f"{lab_dir}: no label files")
    for sid in sids:
        calib = calib_for(gdir, sid)
        gts += labels_to_ground_truth(read_labels(lab_dir / f"{sid}.txt"), sid, calib)
        dp = ddir / f"{sid}.txt"
        if dp.exists():
            dets += read_detections(dp, sid, calib)
    ev = cfg["eval"]
    scale = ev["map_height_scale"] if args.map_heights else 1.0
    report = evaluate_all(dets, gts, kinds=tuple(args.kinds.split(",")), n_points=ev["n_points"],
                          iou_thresholds={"Car": ev["iou_car"], "Person": ev["iou_person"]} if args.iou is None
                          else {"Car": args.iou, "Person": args.iou},
                          height_scale=scale)
    report_to_json(report, args.out)
    table = "".join(report_table(report, k) for k in args.kinds.split(","))
    if args.table:
        Path(args.table).write_text(table)
    print(table, end="")


def cmd_bench(args, cfg):
    det = make_detector(args, cfg)
    if args.bin:
        cloud = read_velodyne(args.bin)
    else:
        # objects come first in the cloud, so trimming the tail only drops ground clutter
        clutter = args.points
        while True:
            cloud, _ = gen_synthetic_scene(SceneSpec(seed=args.seed, clutter_points=clutter, projection=det.proj_cfg))
            if len(cloud) >= args.points:
                break
            clutter += args.points - len(cloud)
        cloud = PointCloud(cloud.points[:args.points])
    report = benchmark(cloud, det, reps=args.reps)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frontview", description="Front-view LiDAR 3D detection pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", help=f"JSON config file (default: ${cfgmod.ENV_VAR} or built-in)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic scenes")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("project", help="point cloud -> front-view map")
    s.add_argument("--bin", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ppm")
    s.add_argument("--upscaled", action="store_true")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("anchors", help="cluster anchor priors from labels")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("-k", type=int)
    s.set_defaults(func=cmd_anchors)

    for name, fn in (("train-pgnet", cmd_train_pgnet), ("train-penet", cmd_train_penet)):
        s = sub.add_parser(name)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--steps", type=int)
        s.add_argument("--trace")
        if name == "train-pgnet":
            s.add_argument("--anchors", required=True)
        else:
            s.add_argument("--pgnet", help="proposal checkpoint; its proposals add training crops")
        s.set_defaults(func=fn)

    for name, fn in (("detect", cmd_detect), ("bench", cmd_bench)):
        s = sub.add_parser(name)
        s.add_argument("--pgnet", required=True)
        s.add_argument("--penet", required=True)
        s.add_argument("--bin")
        if name == "detect":
            s.add_argument("--data")
            s.add_argument("--out", required=True)
        else:
            s.add_argument("--points", type=int, default=120000, help="size of the synthetic cloud")
            s.add_argument("--reps", type=int, default=30)
            s.add_argument("--out")
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="detections + labels -> AP report")
    s.add_argument("--dets", required=True)
    s.add_argument("--gts", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--table")
    s.add_argument("--kinds", default="bev,3d,2d-map")
    s.add_argument("--iou", type=float, help="one IoU threshold for every class")
    s.add_argument("--map-heights", action="store_true",
                   help="label boxes are front-view-map boxes; rescale heights for difficulty buckets")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "detect" and not (args.bin or args.data):
        parser.error("detect needs --bin or --data")
    try:
        cfg = cfgmod.load_config(args.config)
        args.func(args, cfg)
    except (CliError, OSError, ValueError, KeyError) as e:
        print(f"frontview {args.command}: error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
