"""Synthetic multi-target scenarios with missed detections and clutter."""

from dataclasses import dataclass, field

import numpy as np

from .update import MeasurementSet


@dataclass
class TrackSpec:
    birth_frame: int
    death_frame: int
    box: tuple  # (cx, cy, w, h) at birth_frame
    velocity: tuple
    turn_rate: float = 0.0


@dataclass
class ScenarioSpec:
    extent: tuple = (640.0, 480.0)
    frame_count: int = 100
    tracks: list = field(default_factory=list)
    p_detect: float = 1.0
    clutter_rate: float = 0.0
    noise_sigma: float = 0.0
    clutter_size: tuple = ((20.0, 60.0), (40.0, 120.0))
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p_detect <= 1:
            raise ValueError("p_detect must lie in (0, 1]")
        for t in self.tracks:
            if not (1 <= t.birth_frame < t.death_frame <= self.frame_count):
                raise ValueError(f"bad track lifetime {t.birth_frame}..{t.death_frame}")


def trajectories(spec):
    """Ground truth per frame: ``{frame: (labels, boxes)}`` for frames 1..frame_count.

    A track is alive on frames ``birth_frame .. death_frame`` inclusive.
    """
    gt = {k: ([], []) for k in range(1, spec.frame_count + 1)}
    for label, t in enumerate(spec.tracks):
        box = np.asarray(t.box, dtype=float).copy()
        vel = np.asarray(t.velocity, dtype=float).copy()
        c, s = np.cos(t.turn_rate), np.sin(t.turn_rate)
        rot = np.array([[c, -s], [s, c]])
        for k in range(t.birth_frame, t.death_frame + 1):
            gt[k][0].append(label)
            gt[k][1].append(box.copy())
            box[:2] += vel
            if t.turn_rate:
                vel = rot @ vel
    return {k: (np.asarray(lab, dtype=np.int64), np.asarray(b, dtype=float).reshape(-1, 4))
            for k, (lab, b) in gt.items()}


def gen_scenario(spec):
    """Return ``(gt, detections)``; detections is ``{frame: MeasurementSet}``."""
    rng = np.random.default_rng(spec.seed)
    gt = trajectories(spec)
    det = {}
    (wlo, whi), (hlo, hhi) = spec.clutter_size
    for k in range(1, spec.frame_count + 1):
        _, boxes = gt[k]
        hit = rng.random(len(boxes)) < spec.p_detect
        found = boxes[hit] + rng.normal(0.0, 1.0, (int(hit.sum()), 4)) * spec.noise_sigma
        n_c = rng.poisson(spec.clutter_rate) if spec.clutter_rate > 0 else 0
        clutter = np.column_stack([
            rng.uniform(0, spec.extent[0], n_c), rng.uniform(0, spec.extent[1], n_c),
            rng.uniform(wlo, whi, n_c), rng.uniform(hlo, hhi, n_c),
        ]) if n_c else np.zeros((0, 4))
        boxes_k = np.vstack([found, clutter])
        boxes_k[:, 2:] = np.maximum(boxes_k[:, 2:], 1.0)
        det[k] = MeasurementSet(k, boxes_k, np.ones(len(boxes_k)))
    return gt, det


def load_scenario_spec(path):
    """Read a ``key = value`` scenario file.

    ``track = birth, death, cx, cy, w, h, vx, vy[, turn_rate]`` may repeat.
    """
    kw = {"tracks": []}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            nums = [float(v) for v in value.replace(",", " ").split()]
            if key == "track":
                if len(nums) not in (8, 9):
                    raise ValueError(f"{path}:{lineno}: track needs 8 or 9 numbers")
                kw["tracks"].append(TrackSpec(int(nums[0]), int(nums[1]), tuple(nums[2:6]),
                                              tuple(nums[6:8]), nums[8] if len(nums) == 9 else 0.0))
            elif key == "extent":
                kw["extent"] = tuple(nums)
            elif key == "clutter_size":
                kw["clutter_size"] = (tuple(nums[:2]), tuple(nums[2:4]))
            elif key in ("frame_count", "seed"):
                kw[key] = int(nums[0])
            elif key in ("p_detect", "clutter_rate", "noise_sigma"):
                kw[key] = nums[0]
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return ScenarioSpec(**kw)


def linear_scenario(n_targets=5, frame_count=100, extent=(320.0, 240.0), p_detect=1.0,
                    clutter_rate=0.0, noise_sigma=0.0, seed=0, box=(16.0, 32.0), speed=1.5):
    """Non-crossing constant-velocity targets laid out in horizontal lanes."""
    w, h = extent
    lanes = np.linspace(h * 0.15, h * 0.85, n_targets)
    tracks = []
    for n, cy in enumerate(lanes):
        direction = 1.0 if n % 2 == 0 else -1.0
        span = speed * (frame_count - 1)
        cx = w / 2 - direction * span / 2
        vy = 0.15 * (1 if n % 3 == 0 else -1)
        tracks.append(TrackSpec(1, frame_count, (cx, cy, box[0], box[1]), (direction * speed, vy)))
    return ScenarioSpec(extent=extent, frame_count=frame_count, tracks=tracks, p_detect=p_detect,
                        clutter_rate=clutter_rate, noise_sigma=noise_sigma, seed=seed)
