"""Implicit (gridded) representation of the multi-target state.

Maps sample the positional marginal of a Gaussian mixture at cell centres.
Cell ``(i, j)`` covers ``origin + [j, j+1) * T_s`` horizontally and
``origin + [i, i+1) * T_s`` vertically, so map "mass" is
``values.sum() * T_s**2``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .association import hungarian
from .gm_state import BIRTH_LABEL, STATE_DIM, TargetSet, gm_integral, positional_block


class DegeneratePredictionError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    extent: tuple
    sampling_period: float

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))
        if not self.sampling_period > 0:
            raise ValueError("sampling_period must be positive")
        if self.rows < 4 or self.cols < 4:
            raise ValueError(f"grid too small ({self.rows}x{self.cols}); need at least 4x4")

    @property
    def cols(self):
        return int(math.ceil(self.extent[0] / self.sampling_period - 1e-9))

    @property
    def rows(self):
        return int(math.ceil(self.extent[1] / self.sampling_period - 1e-9))

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def cell_area(self):
        return self.sampling_period ** 2

    @property
    def xs(self):
        return self.origin[0] + (np.arange(self.cols) + 0.5) * self.sampling_period

    @property
    def ys(self):
        return self.origin[1] + (np.arange(self.rows) + 0.5) * self.sampling_period

    def cell_center(self, i, j):
        ts = self.sampling_period
        return np.array([self.origin[0] + (j + 0.5) * ts, self.origin[1] + (i + 0.5) * ts])


@dataclass
class PhdMap:
    grid: GridSpec
    values: np.ndarray
    frame: int = 0

    def mass(self):
        return float(self.values.sum() * self.grid.cell_area)


@dataclass
class PddMap:
    grid: GridSpec
    values: np.ndarray
    frame_pair: tuple = (0, 0)

    def mass(self):
        return float(self.values.sum() * self.grid.cell_area)


def render_covariances(covs, grid):
    """Positional covariances used for rendering.

    Components narrower than one cell are widened so their smallest
    eigenvalue is ``T_s**2``; below that, point sampling stops conserving
    mass. Wider components are returned unchanged.
    """
    p = positional_block(covs).copy()
    if p.shape[0] == 0:
        return p
    floor = grid.sampling_period ** 2
    lam_min = np.linalg.eigvalsh(p)[:, 0]
    bump = np.clip(floor - lam_min, 0.0, None)
    p[:, 0, 0] += bump
    p[:, 1, 1] += bump
    return p


def render_phd(targets, grid, frame=None):
    frame = targets.frame if frame is None else frame
    if len(targets) == 0:
        return PhdMap(grid, np.zeros(grid.shape), frame)
    p = render_covariances(targets.covs, grid)
    det = np.linalg.det(p)
    inv = np.linalg.inv(p)
    coefs = targets.weights / (2 * np.pi * np.sqrt(det))
    values = kernels.gaussian_grid(targets.means[:, :2], inv, coefs, grid.xs, grid.ys)
    return PhdMap(grid, values, frame)


def pdd(current, previous):
    if current.grid != previous.grid:
        raise ValueError("grid mismatch between PHD maps")
    return PddMap(current.grid, current.values - previous.values, (previous.frame, current.frame))


def postprocess_prediction(raw, grid, prev_phd, border=5, target_mass=None):
    """Turn a raw network output into a predicted PHD map.

    ``raw + prev_phd`` has its ``border``-cell frame replaced by the median of
    the interior, negatives clamped to zero, and is rescaled so its mass equals
    ``target_mass`` (defaults to the mass of ``prev_phd``).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != grid.shape:
        raise ValueError(f"prediction shape {raw.shape} does not match grid {grid.shape}")
    rows, cols = grid.shape
    if border < 1 or border >= min(rows, cols) / 2:
        raise ValueError("border width must satisfy 1 <= B < min(rows, cols)/2")
    if target_mass is None:
        target_mass = prev_phd.mass()
    v = raw + prev_phd.values
    interior = v[border:rows - border, border:cols - border]
    med = np.median(interior)
    out = np.full_like(v, med)
    out[border:rows - border, border:cols - border] = interior
    np.clip(out, 0.0, None, out=out)
    total = out.sum() * grid.cell_area
    if target_mass <= 0:
        return PhdMap(grid, np.zeros_like(out), prev_phd.frame + 1)
    if not total > 0 or not np.isfinite(total):
        raise DegeneratePredictionError("degenerate prediction: no positive mass after clamping")
    out *= target_mass / total
    return PhdMap(grid, out, prev_phd.frame + 1)


@dataclass
class Peak:
    mean: np.ndarray
    weight: float
    value: float
    cell: tuple


class PeakList(list):
    """List of :class:`Peak` with an ``underfull`` flag."""

    underfull = False


def extract_peaks(phd, count, min_separation=None):
    """The ``count`` highest local maxima, greedily separated.

    Means are refined by the value-weighted centroid of the 3x3 neighbourhood.
    The weight attached here is the local mass in that neighbourhood;
    :func:`assign_covariances` replaces it once a covariance is known.
    """
    grid = phd.grid
    if min_separation is None:
        min_separation = 3 * grid.sampling_period
    if count < 0:
        raise ValueError("count must be nonnegative")
    peaks = PeakList()
    if count == 0:
        return peaks
    v = phd.values
    mask = kernels.local_maxima(v) & (v > 0)
    ii, jj = np.nonzero(mask)
    # descending value; ties broken by row-major order
    order = np.lexsort((ii * v.shape[1] + jj, -v[ii, jj]))
    rows, cols = v.shape
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        i0, i1 = max(i - 1, 0), min(i + 2, rows)
        j0, j1 = max(j - 1, 0), min(j + 2, cols)
        win = np.clip(v[i0:i1, j0:j1], 0, None)
        ys = grid.ys[i0:i1][:, None]
        xs = grid.xs[j0:j1][None, :]
        wsum = win.sum()
        mean = np.array([(win * xs).sum() / wsum, (win * ys).sum() / wsum])
        if any(np.hypot(*(mean - p.mean)) < min_separation for p in peaks):
            continue
        peaks.append(Peak(mean, float(wsum * grid.cell_area), float(v[i, j]), (i, j)))
        if len(peaks) == count:
            break
    peaks.underfull = len(peaks) < count
    return peaks


def peak_weight(peak, cov, grid):
    """Mixture weight implied by a peak value under a Gaussian of covariance ``cov``."""
    p = render_covariances(np.asarray(cov).reshape(1, STATE_DIM, STATE_DIM), grid)[0]
    d = grid.cell_center(*peak.cell) - peak.mean
    attenuation = math.exp(-0.5 * float(d @ np.linalg.solve(p, d)))
    amplitude = peak.value / attenuation
    return amplitude * 2 * math.pi * math.sqrt(np.linalg.det(p))


def assign_covariances(peaks, prev, grid, sigma_birth=20.0, a_birth=5, birth_size=(1.0, 1.0),
                       inflation=0.0):
    """Build predicted target tuples from peaks, borrowing covariance and
    identity from the nearest previous targets (optimal assignment on
    Euclidean centre distance). Unmatched peaks become birth tuples."""
    n = len(peaks)
    if n == 0:
        return TargetSet.empty(prev.frame + 1)
    pos = np.array([p.mean for p in peaks])
    means = np.zeros((n, STATE_DIM))
    means[:, :2] = pos
    means[:, 2:] = birth_size
    covs = np.repeat((np.eye(STATE_DIM) * sigma_birth)[None], n, axis=0)
    labels = np.full(n, BIRTH_LABEL, dtype=np.int64)
    ages = np.full(n, a_birth, dtype=np.int64)
    motions = np.zeros((n, 2))
    runs = np.zeros(n, dtype=np.int64)
    if len(prev):
        cost = np.linalg.norm(pos[:, None, :] - prev.means[None, :, :2], axis=2)
        res = hungarian(cost, forbid_nonnegative=False)
        for pi, qi in res.matches:
            means[pi, 2:] = prev.means[qi, 2:]
            covs[pi] = prev.covs[qi] + inflation * np.eye(STATE_DIM)
            labels[pi] = prev.labels[qi]
            ages[pi] = prev.ages[qi]
            motions[pi] = prev.motions[qi]
            runs[pi] = prev.immature_runs[qi]
    weights = np.array([peak_weight(pk, covs[k], grid) for k, pk in enumerate(peaks)])
    return TargetSet(means, covs, weights, labels, ages, motions, runs, prev.frame + 1)


def predicted_count(mass):
    """Peak count for a carried mixture mass (round half up)."""
    return int(math.floor(mass + 0.5))


__all__ = [
    "DegeneratePredictionError", "GridSpec", "PddMap", "Peak", "PeakList", "PhdMap",
    "assign_covariances", "extract_peaks", "gm_integral", "pdd", "peak_weight",
    "postprocess_prediction", "predicted_count", "render_covariances", "render_phd",
]
