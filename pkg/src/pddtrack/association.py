"""Track-to-track association: IoU-age distance, assignment, age dynamics."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .gm_state import TargetSet


@dataclass(frozen=True)
class AssocConfig:
    a_threshold: int = 5
    a_birth: int = 5
    a_amplification: int = 1
    a_attenuation: int = 2
    coast_decaying: bool = True

    def __post_init__(self):
        if self.a_threshold < 1 or self.a_amplification < 0 or self.a_attenuation < 1:
            raise ValueError("invalid association parameters")


@dataclass
class AssignmentResult:
    matches: list = field(default_factory=list)
    unmatched_prev: list = field(default_factory=list)
    unmatched_curr: list = field(default_factory=list)

    def total_cost(self, cost):
        return float(sum(cost[i, j] for i, j in self.matches))


def iou(a, b):
    return float(kernels.iou_matrix(np.reshape(a, (1, 4)), np.reshape(b, (1, 4)))[0, 0])


def distance_matrix(prev, curr):
    """``-age * IoU`` between every previous and current target."""
    if len(prev) == 0 or len(curr) == 0:
        return np.zeros((len(prev), len(curr)))
    return -prev.ages[:, None].astype(float) * kernels.iou_matrix(prev.means, curr.means)


def hungarian(cost, forbid_nonnegative=True):
    """Minimum-cost one-to-one assignment on a rectangular matrix.

    With ``forbid_nonnegative`` the pairs costing ``>= 0`` are never matched.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    if n == 0 or m == 0:
        return AssignmentResult([], list(range(n)), list(range(m)))
    work = cost
    if forbid_nonnegative:
        # Admissible pairs only: clipping at 0 makes an inadmissible pair no
        # better than leaving both ends unmatched.
        work = np.minimum(cost, 0.0)
    rows, cols = linear_sum_assignment(work)
    matches = []
    for r, c in zip(rows, cols):
        if forbid_nonnegative and cost[r, c] >= 0:
            continue
        matches.append((int(r), int(c)))
    mr = {r for r, _ in matches}
    mc = {c for _, c in matches}
    return AssignmentResult(matches, [i for i in range(n) if i not in mr],
                            [j for j in range(m) if j not in mc])


def age_update(age, survived, cfg):
    if age < 0:
        raise ValueError("age must be nonnegative")
    if survived:
        return int(age + cfg.a_amplification)
    return int(max(age - age // cfg.a_attenuation, 0))


def t2t_associate(prev, selected, cfg, label_counter):
    """Label the selected targets against the previous frame's targets.

    Returns the union of survivors, births and decaying previous targets
    (in that order) and the advanced label counter.
    """
    prev.check_labels()
    res = hungarian(distance_matrix(prev, selected), forbid_nonnegative=True)
    surv_prev = np.array([p for p, _ in res.matches], dtype=np.int64)
    surv_curr = np.array([c for _, c in res.matches], dtype=np.int64)

    survivors = selected.subset(surv_curr)
    if len(survivors):
        survivors.labels = prev.labels[surv_prev].copy()
        survivors.ages = prev.ages[surv_prev] + cfg.a_amplification
        survivors.motions = survivors.means[:, :2] - prev.means[surv_prev, :2]
        survivors.immature_runs = prev.immature_runs[surv_prev].copy()

    births = selected.subset(np.asarray(res.unmatched_curr, dtype=np.int64))
    nb = len(births)
    births.labels = np.arange(label_counter, label_counter + nb, dtype=np.int64)
    births.ages = np.full(nb, cfg.a_birth, dtype=np.int64)
    births.motions = np.zeros((nb, 2))
    births.immature_runs = np.zeros(nb, dtype=np.int64)

    decaying = prev.subset(np.asarray(res.unmatched_prev, dtype=np.int64))
    if len(decaying):
        decaying.ages = decaying.ages - decaying.ages // cfg.a_attenuation
        if cfg.coast_decaying:
            decaying.means[:, :2] += decaying.motions

    out = TargetSet.concat([survivors, births, decaying], frame=selected.frame)
    return out, label_counter + nb


def extract_mature(targets, a_threshold):
    return targets.subset(targets.ages >= a_threshold)


def retire(targets, a_threshold):
    """Advance immature-run counters and drop targets immature for too long."""
    out = targets.copy()
    immature = out.ages < a_threshold
    out.immature_runs = np.where(immature, out.immature_runs + 1, 0)
    return out.subset(out.immature_runs < max(a_threshold, 1))

