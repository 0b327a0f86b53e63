"""``track`` command line: run, simulate, eval, selftest."""

import argparse
import logging
import os
import sys

import numpy as np

from . import selftest
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .metrics import OspaConfig, clear_mot, format_report_row, ospa, write_report
from .mot_io import MotFormatError, load_sequence, parse_ground_truth, write_sequence
from .pipeline import StepError, run, write_outputs
from .simulate import gen_scenario, load_scenario_spec

log = logging.getLogger("pddtrack")


def _cmd_run(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.loss is not None:
        overrides["loss"] = args.loss
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = cfg.replace(**overrides)
    seq = load_sequence(args.seq)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    dump_dir = os.path.join(args.out, "maps") if args.dump_maps else None

    def progress(k, state):
        if k % 10 == 0 or k == seq.frame_count:
            log.info("frame %d/%d: %d reported targets", k, seq.frame_count, len(state.targets))

    result = run(cfg, seq, dump_dir=dump_dir, progress=progress)
    write_outputs(result, args.out)
    if result.tally is not None:
        write_report([result.report_row()], sys.stdout)
    else:
        print(f"wrote {os.path.join(args.out, result.name + '.txt')}")
    return 0


def _cmd_simulate(args):
    spec = load_scenario_spec(args.spec)
    gt, det = gen_scenario(spec)
    name = os.path.basename(os.path.normpath(args.out))
    write_sequence(args.out, name, spec.frame_count, spec.extent, det, gt)
    n_det = sum(len(m) for m in det.values())
    print(f"wrote {args.out}: {spec.frame_count} frames, {len(spec.tracks)} tracks, {n_det} detections")
    return 0


def _cmd_eval(args):
    with open(args.tracks) as fh:
        tracks = parse_ground_truth(fh)
    with open(args.gt) as fh:
        gt = parse_ground_truth(fh)
    cfg = OspaConfig(args.ospa_p, args.ospa_c)
    frames = sorted(set(tracks) | set(gt))
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, 4)))
    per_frame = [ospa(tracks.get(k, empty)[1][:, :2], gt.get(k, empty)[1][:, :2], cfg) for k in frames]
    mean = tuple(float(x) for x in np.mean(per_frame, axis=0)) if per_frame else None
    tally = clear_mot(tracks, gt, args.iou)
    name = os.path.splitext(os.path.basename(args.tracks))[0]
    write_report([format_report_row(name, mean, tally)], sys.stdout)
    return 0


def _cmd_selftest(args):
    return 0 if selftest.run_all(args.seed) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="track", description="Multi-target filtering and tracking.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="track one MOT-style sequence directory")
    r.add_argument("--config", help="key = value configuration file (defaults if omitted)")
    r.add_argument("--seq", required=True, help="sequence directory with det/det.txt")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--loss", choices=("kl", "jsd"))
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-maps", action="store_true", help="write PHD/PDD maps as PGM under <out>/maps")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("simulate", help="generate a synthetic sequence directory")
    s.add_argument("--spec", required=True, help="scenario file")
    s.add_argument("--out", required=True, help="sequence directory to create")
    s.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("eval", help="score a results file against ground truth")
    e.add_argument("--tracks", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--iou", type=float, default=0.5, help="IoU threshold for CLEAR-MOT")
    e.add_argument("--ospa-c", type=float, default=100.0)
    e.add_argument("--ospa-p", type=float, default=1.0)
    e.set_defaults(func=_cmd_eval)

    t = sub.add_parser("selftest", help="run quick oracle checks")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MotFormatError, StepError, OSError, ValueError) as exc:
        print(f"track: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
