"""OSPA and CLEAR-MOT evaluation."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kernels import iou_matrix


@dataclass(frozen=True)
class OspaConfig:
    p: float = 1.0
    c: float = 100.0

    def __post_init__(self):
        if self.p < 1 or self.c <= 0:
            raise ValueError("OSPA needs p >= 1 and c > 0")


def ospa(a, b, cfg=OspaConfig()):
    """OSPA between two point sets; returns ``(overall, loc, card)``.

    ``card`` is the distance obtained with zero localisation cost and
    ``loc = overall - card``.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    na, nb = len(a), len(b)
    n = max(na, nb)
    if n == 0:
        return 0.0, 0.0, 0.0
    p, c = cfg.p, cfg.c
    cost = 0.0
    if na and nb:
        d = np.minimum(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2), c) ** p
        r, k = linear_sum_assignment(d)
        cost = float(d[r, k].sum())
    card_term = c ** p * abs(na - nb)
    overall = ((card_term + cost) / n) ** (1.0 / p)
    card = (card_term / n) ** (1.0 / p)
    return overall, overall - card, card


@dataclass
class MotTally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt: int = 0

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def mota(self):
        return 1.0 - (self.fn + self.fp + self.idsw) / self.gt if self.gt else 0.0

    @property
    def motal(self):
        if not self.gt:
            return 0.0
        log_sw = math.log10(self.idsw) if self.idsw > 0 else 0.0
        return 1.0 - (self.fn + self.fp + log_sw) / self.gt


def _frame_items(frames, k):
    labels, boxes = frames.get(k, ((), ()))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    if np.unique(labels).size != labels.size:
        raise ValueError(f"duplicate labels in frame {k}")
    return labels, boxes


def clear_mot(tracks, gt, iou_thresh=0.5, per_frame=None):
    """CLEAR-MOT tally with match persistence.

    ``tracks`` and ``gt`` map frame -> ``(labels, boxes)``. A ground-truth
    object keeps its previous track while their IoU stays at or above the
    threshold; the rest are matched by maximum total IoU. An identity switch is
    counted when an object is matched to a different track than the one it was
    last matched to.
    """
    tally = MotTally()
    last_match = {}  # gt label -> track label, current frame only
    last_seen = {}  # gt label -> last track label ever matched
    for k in sorted(set(tracks) | set(gt)):
        g_lab, g_box = _frame_items(gt, k)
        t_lab, t_box = _frame_items(tracks, k)
        iou = iou_matrix(g_box, t_box) if len(g_lab) and len(t_lab) else np.zeros((len(g_lab), len(t_lab)))
        pairs = []
        free_g = np.ones(len(g_lab), dtype=bool)
        free_t = np.ones(len(t_lab), dtype=bool)
        t_index = {int(l): j for j, l in enumerate(t_lab)}
        for gi, gl in enumerate(g_lab):
            tl = last_match.get(int(gl))
            j = t_index.get(tl) if tl is not None else None
            if j is not None and free_t[j] and iou[gi, j] >= iou_thresh:
                pairs.append((gi, j))
                free_g[gi] = free_t[j] = False
        gi_idx, tj_idx = np.flatnonzero(free_g), np.flatnonzero(free_t)
        if len(gi_idx) and len(tj_idx):
            sub = iou[np.ix_(gi_idx, tj_idx)]
            cost = np.where(sub >= iou_thresh, -sub, 0.0)
            r, c = linear_sum_assignment(cost)
            for a, b in zip(r, c):
                if sub[a, b] >= iou_thresh:
                    pairs.append((int(gi_idx[a]), int(tj_idx[b])))
        current = {}
        for gi, j in pairs:
            gl, tl = int(g_lab[gi]), int(t_lab[j])
            if gl in last_seen and last_seen[gl] != tl:
                tally.idsw += 1
            last_seen[gl] = tl
            current[gl] = tl
        last_match = current
        n_tp = len(pairs)
        tally.tp += n_tp
        tally.fn += len(g_lab) - n_tp
        tally.fp += len(t_lab) - n_tp
        tally.gt += len(g_lab)
        if per_frame is not None:
            per_frame.append((k, n_tp, len(t_lab) - n_tp, len(g_lab) - n_tp))
    return tally


def clear_mot_scores(tracks, gt, iou_thresh=0.5):
    """``(precision, recall, MOTA, MOTAL)``."""
    t = clear_mot(tracks, gt, iou_thresh)
    return t.precision, t.recall, t.mota, t.motal


REPORT_COLUMNS = ("name", "OSPA", "OSPA-Loc", "OSPA-Card", "Rcll", "Prcn", "MOTA", "MOTAL")


def format_report_row(name, ospa_mean, tally):
    o = ospa_mean if ospa_mean is not None else (float("nan"),) * 3
    vals = [name] + [f"{x:.4f}" for x in (*o, tally.recall, tally.precision, tally.mota, tally.motal)]
    return ",".join(vals)


def write_report(rows, sink):
    sink.write(",".join(REPORT_COLUMNS) + "\n")
    for row in rows:
        sink.write(row + "\n")
