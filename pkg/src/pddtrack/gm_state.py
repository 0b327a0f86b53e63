"""Explicit Gaussian-mixture multi-target state.

A :class:`TargetSet` stores its components as parallel numpy arrays so the
update and merge code can stay vectorised; :class:`TargetTuple` is the
per-target view handed out by indexing and iteration.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

STATE_DIM = 4
BIRTH_LABEL = -1


class DegenerateCovarianceError(ValueError):
    pass


@dataclass
class TargetTuple:
    """One target: mean ``(cx, cy, w, h)``, covariance, weight, label, age, motion.

    ``immature_run`` counts consecutive frames the target has spent with an
    age below the maturity threshold; the pipeline uses it to retire targets.
    """

    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0
    label: int = BIRTH_LABEL
    age: int = 0
    motion: np.ndarray = field(default_factory=lambda: np.zeros(2))
    immature_run: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)
        self.motion = np.asarray(self.motion, dtype=float).reshape(2)
        self.weight = float(self.weight)
        self.label = int(self.label)
        self.age = int(self.age)
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if self.age < 0:
            raise ValueError("age must be nonnegative")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9, rtol=0):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov)[0] <= 0:
            raise ValueError("covariance must be positive definite")


class TargetSet:
    """Ordered collection of targets at one frame (struct-of-arrays)."""

    def __init__(self, means=None, covs=None, weights=None, labels=None, ages=None,
                 motions=None, immature_runs=None, frame=0):
        means = np.zeros((0, STATE_DIM)) if means is None else np.asarray(means, dtype=float)
        self.means = means.reshape(-1, STATE_DIM)
        n = self.means.shape[0]
        self.covs = (np.zeros((0, STATE_DIM, STATE_DIM)) if covs is None
                     else np.asarray(covs, dtype=float).reshape(n, STATE_DIM, STATE_DIM))
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(n)
        self.labels = (np.full(n, BIRTH_LABEL, dtype=np.int64) if labels is None
                       else np.asarray(labels, dtype=np.int64).reshape(n))
        self.ages = np.zeros(n, dtype=np.int64) if ages is None else np.asarray(ages, dtype=np.int64).reshape(n)
        self.motions = np.zeros((n, 2)) if motions is None else np.asarray(motions, dtype=float).reshape(n, 2)
        self.immature_runs = (np.zeros(n, dtype=np.int64) if immature_runs is None
                              else np.asarray(immature_runs, dtype=np.int64).reshape(n))
        self.frame = int(frame)

    @classmethod
    def empty(cls, frame=0):
        return cls(frame=frame)

    @classmethod
    def from_tuples(cls, targets, frame=0):
        targets = list(targets)
        if not targets:
            return cls(frame=frame)
        return cls(
            means=np.stack([t.mean for t in targets]),
            covs=np.stack([t.cov for t in targets]),
            weights=[t.weight for t in targets],
            labels=[t.label for t in targets],
            ages=[t.age for t in targets],
            motions=np.stack([t.motion for t in targets]),
            immature_runs=[t.immature_run for t in targets],
            frame=frame,
        )

    @classmethod
    def concat(cls, sets, frame=None):
        sets = list(sets)
        if frame is None:
            frame = sets[-1].frame if sets else 0
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls(frame=frame)
        return cls(
            means=np.concatenate([s.means for s in sets]),
            covs=np.concatenate([s.covs for s in sets]),
            weights=np.concatenate([s.weights for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            ages=np.concatenate([s.ages for s in sets]),
            motions=np.concatenate([s.motions for s in sets]),
            immature_runs=np.concatenate([s.immature_runs for s in sets]),
            frame=frame,
        )

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i):
        return TargetTuple(self.means[i].copy(), self.covs[i].copy(), self.weights[i],
                           self.labels[i], self.ages[i], self.motions[i].copy(),
                           self.immature_runs[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"TargetSet(n={len(self)}, frame={self.frame})"

    def subset(self, idx):
        """Targets selected by an index array or boolean mask, order preserved."""
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = idx.astype(np.int64)
        return TargetSet(self.means[idx], self.covs[idx], self.weights[idx], self.labels[idx],
                         self.ages[idx], self.motions[idx], self.immature_runs[idx], self.frame)

    def copy(self, frame=None):
        return TargetSet(self.means.copy(), self.covs.copy(), self.weights.copy(),
                         self.labels.copy(), self.ages.copy(), self.motions.copy(),
                         self.immature_runs.copy(), self.frame if frame is None else frame)

    @property
    def boxes(self):
        return self.means.copy()

    @property
    def centers(self):
        return self.means[:, :2].copy()

    def check_labels(self):
        lab = self.labels[self.labels >= 0]
        if np.unique(lab).size != lab.size:
            raise ValueError("duplicate labels in target set")


def positional_block(covs):
    return np.asarray(covs)[..., :2, :2]


def gm_eval(targets, point):
    """Mixture density of the positional marginal at a 2-D ``point``."""
    if len(targets) == 0:
        return 0.0
    point = np.asarray(point, dtype=float).reshape(2)
    p = positional_block(targets.covs)
    det = p[:, 0, 0] * p[:, 1, 1] - p[:, 0, 1] * p[:, 1, 0]
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        bad = int(np.flatnonzero(~(det > 0))[0])
        raise DegenerateCovarianceError(f"degenerate covariance (component {bad})")
    d = point[None, :] - targets.means[:, :2]
    sol = np.linalg.solve(p, d[:, :, None])[:, :, 0]
    maha = np.einsum("ki,ki->k", d, sol)
    dens = targets.weights * np.exp(-0.5 * maha) / (2 * np.pi * np.sqrt(det))
    return float(dens.sum())


def gm_integral(targets):
    """Total mixture weight, i.e. the expected number of targets."""
    return float(np.sum(targets.weights))


def prune_merge(targets, truncate_thresh=1e-5, merge_dist=4.0, j_max=None):
    """Truncate, merge and cap a Gaussian mixture.

    Components with weight below ``truncate_thresh`` are dropped. The
    remaining ones are clustered greedily around the heaviest component: every
    component whose squared Mahalanobis distance (under its own covariance) to
    the leader is at most ``merge_dist`` is fused by moment matching. The
    merged component keeps the label, age, motion and immature run of the
    heaviest member. Finally at most ``j_max`` components (by weight) are kept.
    """
    if truncate_thresh < 0 or merge_dist <= 0 or (j_max is not None and j_max < 1):
        raise ValueError("invalid prune/merge parameters")
    keep = np.flatnonzero(targets.weights >= truncate_thresh)
    if keep.size == 0:
        return TargetSet.empty(targets.frame)
    s = targets.subset(keep)
    n = len(s)
    inv = np.linalg.inv(s.covs)
    remaining = np.ones(n, dtype=bool)
    # stable: ties resolved by original order
    order = np.argsort(-s.weights, kind="stable")
    out_idx, means, covs, weights = [], [], [], []
    for lead in order:
        if not remaining[lead]:
            continue
        cand = np.flatnonzero(remaining)
        d = s.means[cand] - s.means[lead]
        maha = np.einsum("ki,kij,kj->k", d, inv[cand], d)
        members = cand[maha <= merge_dist]
        if lead not in members:
            members = np.append(members, lead)
        w = s.weights[members]
        wsum = w.sum()
        if wsum > 0:
            m = (w[:, None] * s.means[members]).sum(0) / wsum
            diff = s.means[members] - m
            c = (w[:, None, None] * (s.covs[members]
                                     + diff[:, :, None] * diff[:, None, :])).sum(0) / wsum
        else:
            m, c = s.means[lead].copy(), s.covs[lead].copy()
        c = 0.5 * (c + c.T)
        remaining[members] = False
        out_idx.append(lead)
        means.append(m)
        covs.append(c)
        weights.append(wsum)
    out = s.subset(np.asarray(out_idx))
    out.means = np.asarray(means).reshape(-1, STATE_DIM)
    out.covs = np.asarray(covs).reshape(-1, STATE_DIM, STATE_DIM)
    out.weights = np.asarray(weights)
    if j_max is not None and len(out) > j_max:
        top = np.sort(np.argsort(-out.weights, kind="stable")[:j_max])
        out = out.subset(top)
    return out


def poisson_inverse_cdf(u, lam):
    """Smallest ``n >= 0`` with ``P(N <= n) >= u`` for ``N ~ Poisson(lam)``.

    For ``u > 0.5`` the search runs on the upper tail against ``1 - u``: a
    forward CDF saturates in float just below 1 and cannot reach such ``u``.
    """
    if lam <= 0 or u <= 0:
        return 0
    # log-space pmf, so terms far out in either tail do not underflow early
    top = int(lam + 40 * math.sqrt(lam) + 60)
    n = np.arange(top + 1)
    logp = n * math.log(lam) - lam - gammaln(n + 1)
    pmf = np.exp(logp)
    if u <= 0.5:
        return int(np.searchsorted(np.cumsum(pmf), u))
    # tail[k] = P(N > k), summed smallest terms first
    tail = np.append(np.cumsum(pmf[::-1])[::-1][1:], 0.0)
    return int(np.argmax(tail <= 1.0 - u))


def jmax_draw(m_prev, rng):
    """``max(m_prev, Poisson(m_prev))`` using one uniform draw from ``rng``."""
    if m_prev < 0:
        raise ValueError("m_prev must be nonnegative")
    u = rng.random()
    return max(int(m_prev), poisson_inverse_cdf(u, float(m_prev)))
