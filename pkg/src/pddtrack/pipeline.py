"""Per-frame filtering and tracking loop."""

import copy
import io
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import convlstm
from .association import extract_mature, retire, t2t_associate
from .config import PipelineConfig
from .gm_state import TargetSet, gm_integral
from .metrics import OspaConfig, clear_mot, format_report_row, ospa, write_report
from .mot_io import dump_map, write_results
from .phd_grid import (GridSpec, PhdMap, assign_covariances, extract_peaks, pdd,
                       postprocess_prediction, predicted_count, render_phd)
from .update import MeasurementSet, append_births, kalman_update, select_by_weight

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    def __init__(self, frame, stage, cause):
        super().__init__(f"frame {frame}, stage '{stage}': {cause}")
        self.frame = frame
        self.stage = stage


@dataclass
class PipelineState:
    grid: GridSpec
    targets: TargetSet  # reported (mature) targets X_{k-1}
    carried: TargetSet  # every live track, including immature and decaying ones
    prev_phd: PhdMap
    batch: convlstm.PddBatch
    net: convlstm.ConvLstmParams
    opt: convlstm.AdamState
    rng: np.random.Generator
    label_counter: int = 0
    frame: int = 0
    losses: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def init_state(cfg, grid):
    net = convlstm.init_params(cfg.filters, seed=cfg.seed, readout_bias=cfg.readout_bias)
    return PipelineState(
        grid=grid,
        targets=TargetSet.empty(0),
        carried=TargetSet.empty(0),
        prev_phd=PhdMap(grid, np.zeros(grid.shape), 0),
        batch=convlstm.PddBatch(cfg.batch_size),
        net=net,
        opt=convlstm.AdamState.for_params(net, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps),
        rng=np.random.default_rng(cfg.seed + 1),
    )


class _Stage:
    def __init__(self, frame, timings):
        self.frame = frame
        self.timings = timings
        self.name = None

    def __call__(self, name):
        self.name = name
        return self

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self._t0
        if exc is not None and not isinstance(exc, StepError):
            raise StepError(self.frame, self.name, exc) from exc
        return False


def step(state, z, cfg, update_cfg=None):
    """Advance one frame. Returns ``(new_state, X_k, v_k)``; ``state`` is not modified."""
    grid = state.grid
    k = state.frame + 1
    if update_cfg is None:
        update_cfg = cfg.update_config(grid.extent)
    acfg = cfg.assoc_config()
    rng = copy.deepcopy(state.rng)
    timings = {}
    stage = _Stage(k, timings)

    with stage("predict"):
        if state.batch.full:
            raw = convlstm.predict(state.net, state.batch, cfg.relu_output)
            if cfg.denormalize_prediction:
                raw = convlstm.to_pdd_units(raw, state.batch.maps[-1].values)
        else:
            raw = np.zeros(grid.shape)
    with stage("postprocess"):
        m_prev = gm_integral(state.targets)
        v_pred = postprocess_prediction(raw, grid, state.prev_phd, cfg.border, m_prev)
    with stage("extract"):
        peaks = extract_peaks(v_pred, predicted_count(m_prev), cfg.min_separation * grid.sampling_period)
        predicted = assign_covariances(peaks, state.targets, grid, cfg.sigma_birth, cfg.a_birth,
                                       inflation=cfg.cov_inflation)
    with stage("update"):
        predicted.frame = k
        plus_b = append_births(predicted, z, update_cfg)
        updated = kalman_update(plus_b, z, update_cfg, rng=rng, m_prev=len(state.carried))
        selected = select_by_weight(updated, cfg.weight_threshold)
    with stage("associate"):
        t2t, counter = t2t_associate(state.carried, selected, acfg, state.label_counter)
        carried = retire(t2t, cfg.a_threshold)
        carried.frame = k
        reported = extract_mature(carried, cfg.a_threshold)
    with stage("render"):
        v_k = render_phd(reported, grid, frame=k)
        d_k = pdd(v_k, state.prev_phd)
    net, opt, losses = state.net, state.opt, []
    with stage("train"):
        batch = state.batch.copy()
        if batch.full:
            net, opt, losses = convlstm.train_online(net, opt, batch, d_k, cfg.epochs, cfg.loss,
                                                     cfg.relu_output, cfg.l2_kernel)
        batch.append(d_k)

    new = PipelineState(grid, reported, carried, v_k, batch, net, opt, rng, counter, k,
                        losses, timings)
    return new, reported, v_k


@dataclass
class RunResult:
    name: str
    tracks: dict
    ospa: list = None  # per-frame (overall, loc, card) when ground truth is present
    tally: object = None
    losses: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def mean_ospa(self, start=0):
        if not self.ospa:
            return None
        arr = np.asarray(self.ospa[start:])
        return tuple(float(x) for x in arr.mean(axis=0))

    def report_row(self):
        return format_report_row(self.name, self.mean_ospa(), self.tally) if self.tally else None

    def results_text(self):
        buf = io.StringIO()
        write_results(self.tracks, buf)
        return buf.getvalue()


def run(cfg, seq, dump_dir=None, progress=None):
    """Fold :func:`step` over every frame of a sequence."""
    if seq.frame_count < 1:
        raise ValueError("sequence has no frames")
    grid = GridSpec((0.0, 0.0), seq.image_extent, cfg.sampling_period)
    ucfg = cfg.update_config(seq.image_extent)
    state = init_state(cfg, grid)
    ocfg = OspaConfig(cfg.ospa_p, cfg.ospa_c)
    tracks, ospas, timings, losses = {}, [], [], {}
    for k in range(1, seq.frame_count + 1):
        z = seq.detections.get(k, MeasurementSet(k))
        state, x_k, v_k = step(state, z, cfg, ucfg)
        tracks[k] = (x_k.labels.copy(), x_k.means.copy())
        timings.append(state.timings)
        if state.losses:
            losses[k] = state.losses
        if seq.ground_truth is not None:
            _, gboxes = seq.ground_truth.get(k, ((), np.zeros((0, 4))))
            ospas.append(ospa(x_k.centers, np.asarray(gboxes).reshape(-1, 4)[:, :2], ocfg))
        if dump_dir is not None:
            os.makedirs(dump_dir, exist_ok=True)
            with open(os.path.join(dump_dir, f"phd_{k:06d}.pgm"), "w") as fh:
                dump_map(v_k, fh, "pgm")
            if len(state.batch):
                with open(os.path.join(dump_dir, f"pdd_{k:06d}.pgm"), "w") as fh:
                    dump_map(state.batch.maps[-1], fh, "pgm")
        if progress:
            progress(k, state)
    tally = clear_mot(tracks, seq.ground_truth, cfg.iou_thresh) if seq.ground_truth is not None else None
    return RunResult(seq.name, tracks, ospas if seq.ground_truth is not None else None, tally,
                     losses, timings)


def write_outputs(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{result.name}.txt"), "w") as fh:
        fh.write(result.results_text())
    if result.ospa is not None:
        with open(os.path.join(out_dir, f"{result.name}_ospa.csv"), "w") as fh:
            fh.write("frame,OSPA,OSPA-Loc,OSPA-Card\n")
            for k, (o, l, c) in enumerate(result.ospa, 1):
                fh.write(f"{k},{o:.6f},{l:.6f},{c:.6f}\n")
    if result.tally is not None:
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            write_report([result.report_row()], fh)
