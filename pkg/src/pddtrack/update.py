"""GM-PHD measurement update with births and a uniform clutter model."""

from dataclasses import dataclass, field

import numpy as np

from .gm_state import BIRTH_LABEL, STATE_DIM, TargetSet, jmax_draw, prune_merge


class SingularInnovationError(np.linalg.LinAlgError):
    pass


@dataclass
class MeasurementSet:
    frame: int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    confidences: np.ndarray = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 4)
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=float).reshape(-1)
        if np.any(self.boxes[:, 2:] <= 0):
            raise ValueError("measurement boxes need positive width and height")

    def __len__(self):
        return self.boxes.shape[0]


@dataclass
class UpdateConfig:
    H: np.ndarray = field(default_factory=lambda: np.eye(STATE_DIM))
    R: np.ndarray = field(default_factory=lambda: 10.0 * np.eye(STATE_DIM))
    p_detect: float = 0.9
    clutter_rate: float = 2.0
    area: float = 640.0 * 480.0
    size_span: tuple = (640.0, 480.0)
    weight_threshold: float = 0.5
    sigma_birth: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(STATE_DIM))
    weight_birth: float = 1.0
    a_birth: int = 5
    motion_birth: tuple = (0.0, 0.0)
    truncate_thresh: float = 1e-5
    merge_dist: float = 4.0

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.sigma_birth = np.asarray(self.sigma_birth, dtype=float)
        if not 0 < self.p_detect <= 1:
            raise ValueError("p_detect must lie in (0, 1]")
        if self.clutter_rate < 0 or self.area <= 0:
            raise ValueError("clutter rate must be >= 0 and area > 0")
        if np.any(np.linalg.eigvalsh(0.5 * (self.R + self.R.T)) <= 0):
            raise ValueError("R must be positive definite")


def append_births(predicted, z, cfg):
    n = len(z)
    if n == 0:
        return predicted.copy(frame=z.frame)
    births = TargetSet(
        means=z.boxes.copy(),
        covs=np.repeat(cfg.sigma_birth[None], n, axis=0),
        weights=np.full(n, cfg.weight_birth),
        labels=np.full(n, BIRTH_LABEL, dtype=np.int64),
        ages=np.full(n, cfg.a_birth, dtype=np.int64),
        motions=np.tile(np.asarray(cfg.motion_birth, dtype=float), (n, 1)),
        frame=z.frame,
    )
    return TargetSet.concat([predicted, births], frame=z.frame)


def measurement_volume(cfg):
    return cfg.area * cfg.size_span[0] * cfg.size_span[1]


def clutter_intensity(z_box, cfg):
    """Uniform clutter density over positions and admissible box sizes."""
    return cfg.clutter_rate / measurement_volume(cfg)


def kalman_update(targets, z, cfg, j_max=None, rng=None, m_prev=None, prune=True):
    """Detection and missed-detection branches of the GM-PHD correction.

    Output order is component-major, measurement-minor for the detection
    branch, followed by the missed-detection copies. With ``prune`` the result
    goes through :func:`prune_merge`; ``j_max`` is drawn from ``rng`` around
    ``m_prev`` unless passed explicitly.
    """
    H, R = cfg.H, cfg.R
    n, nz = len(targets), len(z)
    missed = targets.copy(frame=z.frame)
    missed.weights = (1.0 - cfg.p_detect) * targets.weights

    if n and nz:
        S = H @ targets.covs @ H.T + R  # (n, dm, dm)
        sign, logdet = np.linalg.slogdet(S)
        if np.any(sign <= 0):
            bad = int(np.flatnonzero(sign <= 0)[0])
            raise SingularInnovationError(f"singular innovation covariance for component {bad}")
        S_inv = np.linalg.inv(S)
        K = targets.covs @ H.T @ S_inv  # (n, d, dm)
        P = (np.eye(STATE_DIM)[None] - K @ H) @ targets.covs
        P = 0.5 * (P + np.swapaxes(P, 1, 2))
        pred_z = targets.means @ H.T  # (n, dm)
        nu = z.boxes[None, :, :] - pred_z[:, None, :]  # (n, nz, dm)
        maha = np.sum((nu @ S_inv) * nu, axis=2)
        dm = H.shape[0]
        q = np.exp(-0.5 * maha - 0.5 * logdet[:, None] - 0.5 * dm * np.log(2 * np.pi))
        num = cfg.p_detect * targets.weights[:, None] * q
        kappa = clutter_intensity(None, cfg)
        w = num / (kappa + num.sum(axis=0, keepdims=True))
        # detection block then missed copies, written in place: the n*|Z|
        # covariance block is the dominant allocation, so it is built once
        total = n * nz + n
        means = np.empty((total, STATE_DIM))
        means[:n * nz] = (targets.means[:, None, :] + nu @ np.swapaxes(K, 1, 2)).reshape(-1, STATE_DIM)
        means[n * nz:] = targets.means
        covs = np.empty((total, STATE_DIM, STATE_DIM))
        covs[:n * nz].reshape(n, nz, STATE_DIM, STATE_DIM)[:] = P[:, None]
        covs[n * nz:] = targets.covs
        out = TargetSet(
            means=means,
            covs=covs,
            weights=np.concatenate([w.reshape(-1), missed.weights]),
            labels=np.concatenate([np.repeat(targets.labels, nz), targets.labels]),
            ages=np.concatenate([np.repeat(targets.ages, nz), targets.ages]),
            motions=np.concatenate([np.repeat(targets.motions, nz, axis=0), targets.motions]),
            immature_runs=np.concatenate([np.repeat(targets.immature_runs, nz), targets.immature_runs]),
            frame=z.frame,
        )
    else:
        out = missed
    if not prune:
        return out
    if j_max is None and rng is not None and m_prev is not None and m_prev > 0:
        j_max = jmax_draw(m_prev, rng)
    return prune_merge(out, cfg.truncate_thresh, cfg.merge_dist, j_max)


def select_by_weight(targets, weight_threshold):
    return targets.subset(targets.weights > weight_threshold)
