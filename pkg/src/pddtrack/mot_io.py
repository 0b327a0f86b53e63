"""MOT-challenge text formats, sequence folders and map dumps."""

import configparser
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .update import MeasurementSet

log = logging.getLogger(__name__)


class MotFormatError(ValueError):
    pass


@dataclass
class SequenceData:
    name: str
    frame_count: int
    image_extent: tuple
    detections: dict = field(default_factory=dict)
    ground_truth: dict = None


def _rows(stream):
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line:
            continue
        try:
            yield lineno, [float(x) for x in line.split(",")]
        except ValueError as exc:
            raise MotFormatError(f"line {lineno}: malformed row {line!r}") from exc


def parse_detections(stream, conf_thresh=0.0, stats=None):
    """``frame,id,left,top,w,h,conf[,x,y,z]`` rows -> ``{frame: MeasurementSet}``."""
    boxes, confs = {}, {}
    skipped = 0
    for lineno, r in _rows(stream):
        if len(r) < 7:
            raise MotFormatError(f"line {lineno}: expected at least 7 fields, got {len(r)}")
        frame, _, left, top, w, h, conf = r[:7]
        if w <= 0 or h <= 0:
            skipped += 1
            continue
        if conf < conf_thresh:
            continue
        k = int(frame)
        boxes.setdefault(k, []).append((left + w / 2, top + h / 2, w, h))
        confs.setdefault(k, []).append(conf)
    if skipped:
        log.warning("skipped %d detections with non-positive size", skipped)
    if stats is not None:
        stats["skipped"] = skipped
    return {k: MeasurementSet(k, np.asarray(boxes[k]), np.asarray(confs[k])) for k in sorted(boxes)}


def parse_ground_truth(stream):
    """``frame,id,left,top,w,h,active[,class,visibility]`` -> ``{frame: (labels, boxes)}``.

    Rows whose seventh column is 0 are inactive and dropped.
    """
    out = {}
    seen = set()
    for lineno, r in _rows(stream):
        if len(r) < 6:
            raise MotFormatError(f"line {lineno}: expected at least 6 fields, got {len(r)}")
        frame, ident, left, top, w, h = r[:6]
        if len(r) >= 7 and r[6] == 0:
            continue
        key = (int(frame), int(ident))
        if key in seen:
            raise MotFormatError(f"line {lineno}: duplicate id {key[1]} in frame {key[0]}")
        seen.add(key)
        if w <= 0 or h <= 0:
            continue
        out.setdefault(key[0], ([], []))
        out[key[0]][0].append(key[1])
        out[key[0]][1].append((left + w / 2, top + h / 2, w, h))
    return {k: (np.asarray(l, dtype=np.int64), np.asarray(b, dtype=float).reshape(-1, 4))
            for k, (l, b) in sorted(out.items())}


def _fmt(x):
    s = f"{x:.9f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def write_results(tracks, sink):
    """Write ``{frame: (labels, boxes)}`` in MOT result format, sorted by frame then label."""
    for k in sorted(tracks):
        labels, boxes = tracks[k]
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        if np.any(labels < 0):
            raise ValueError("result labels must be nonnegative")
        for j in np.argsort(labels, kind="stable"):
            cx, cy, w, h = boxes[j]
            sink.write(",".join([str(int(k)), str(int(labels[j])), _fmt(cx - w / 2), _fmt(cy - h / 2),
                                 _fmt(w), _fmt(h), "1", "-1", "-1", "-1"]) + "\n")


def dump_map(phd_map, sink, mode="pgm"):
    v = np.asarray(phd_map.values, dtype=float)
    rows, cols = v.shape
    if mode == "csv":
        for row in v:
            sink.write(",".join(repr(float(x)) for x in row) + "\n")
        return
    if mode != "pgm":
        raise ValueError(f"unknown dump mode {mode!r}")
    lo, hi = v.min(), v.max()
    if hi > lo:
        px = np.rint((v - lo) / (hi - lo) * 255).astype(int)
    else:
        px = np.zeros(v.shape, dtype=int)
    sink.write(f"P2\n{cols} {rows}\n255\n")
    for row in px:
        sink.write(" ".join(str(x) for x in row) + "\n")


def read_map_csv(stream):
    return np.loadtxt(stream, delimiter=",", ndmin=2)


def read_seqinfo(path):
    cp = configparser.ConfigParser()
    cp.read(path)
    sec = cp["Sequence"]
    return {
        "name": sec.get("name"),
        "frame_count": sec.getint("seqLength"),
        "image_extent": (sec.getfloat("imWidth"), sec.getfloat("imHeight")),
    }


def write_seqinfo(path, name, frame_count, extent):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["Sequence"] = {"name": name, "seqLength": str(frame_count),
                      "imWidth": _fmt(extent[0]), "imHeight": _fmt(extent[1])}
    with open(path, "w") as fh:
        cp.write(fh)


def load_sequence(seq_dir, conf_thresh=0.0):
    """Load ``<seq>/det/det.txt``, optional ``gt/gt.txt`` and ``seqinfo.ini``."""
    name = os.path.basename(os.path.normpath(seq_dir))
    with open(os.path.join(seq_dir, "det", "det.txt")) as fh:
        det = parse_detections(fh, conf_thresh)
    gt = None
    gt_path = os.path.join(seq_dir, "gt", "gt.txt")
    if os.path.exists(gt_path):
        with open(gt_path) as fh:
            gt = parse_ground_truth(fh)
    info_path = os.path.join(seq_dir, "seqinfo.ini")
    if os.path.exists(info_path):
        info = read_seqinfo(info_path)
        frame_count, extent = info["frame_count"], info["image_extent"]
        name = info["name"] or name
    else:
        frame_count = max(list(det) + list(gt or {}) + [1])
        extent = infer_extent(det)
    return SequenceData(name, frame_count, extent, det, gt)


def infer_extent(detections, pad=0.1):
    boxes = [m.boxes for m in detections.values() if len(m)]
    if not boxes:
        return (100.0, 100.0)
    b = np.vstack(boxes)
    right = np.max(b[:, 0] + b[:, 2] / 2)
    bottom = np.max(b[:, 1] + b[:, 3] / 2)
    return (float(right * (1 + pad)), float(bottom * (1 + pad)))


def gt_to_rows(gt):
    """Ground truth in gt.txt format (active flag 1, class 1, visibility 1)."""
    buf = io.StringIO()
    write_results(gt, buf)
    return "".join(line.rsplit(",", 3)[0] + ",1,1\n" for line in buf.getvalue().splitlines())


def write_sequence(seq_dir, name, frame_count, extent, detections, gt=None):
    os.makedirs(os.path.join(seq_dir, "det"), exist_ok=True)
    with open(os.path.join(seq_dir, "det", "det.txt"), "w") as fh:
        for k in sorted(detections):
            m = detections[k]
            for j, (cx, cy, w, h) in enumerate(m.boxes):
                conf = m.confidences[j] if m.confidences is not None else 1.0
                fh.write(",".join([str(k), "-1", _fmt(cx - w / 2), _fmt(cy - h / 2), _fmt(w), _fmt(h),
                                   _fmt(conf), "-1", "-1", "-1"]) + "\n")
    if gt is not None:
        os.makedirs(os.path.join(seq_dir, "gt"), exist_ok=True)
        with open(os.path.join(seq_dir, "gt", "gt.txt"), "w") as fh:
            fh.write(gt_to_rows(gt))
    write_seqinfo(os.path.join(seq_dir, "seqinfo.ini"), name, frame_count, extent)
