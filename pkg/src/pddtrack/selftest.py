"""Quick oracle checks runnable from an installed package (``track selftest``).

Each check compares a production routine against an independent brute-force
evaluation on small random inputs. The full suites live under ``tests/``.
"""

import itertools
import math
import time

import numpy as np

from . import convlstm
from .association import AssocConfig, age_update, hungarian
from .gm_state import TargetSet
from .metrics import OspaConfig, ospa
from .phd_grid import GridSpec, PhdMap, postprocess_prediction
from .update import MeasurementSet, UpdateConfig, kalman_update


def _brute_assignment(cost):
    n, m = cost.shape
    if n > m:
        return _brute_assignment(cost.T)
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))


def check_hungarian(rng, trials=40):
    for _ in range(trials):
        n, m = rng.integers(1, 6, size=2)
        cost = rng.normal(size=(n, m))
        res = hungarian(cost, forbid_nonnegative=False)
        if abs(res.total_cost(cost) - _brute_assignment(cost)) > 1e-12:
            return False, f"mismatch on {n}x{m}"
    return True, f"{trials} matrices"


def _brute_ospa(a, b, c):
    if len(a) > len(b):
        a, b = b, a
    n = len(b)
    if n == 0:
        return 0.0
    best = min(sum(min(c, math.dist(a[i], b[p[i]])) for i in range(len(a)))
               for p in itertools.permutations(range(n), len(a)))
    return (best + c * (n - len(a))) / n


def check_ospa(rng, trials=40):
    cfg = OspaConfig(1.0, 100.0)
    for _ in range(trials):
        a = rng.uniform(0, 200, (rng.integers(0, 5), 2))
        b = rng.uniform(0, 200, (rng.integers(0, 5), 2))
        got = ospa(a, b, cfg)[0]
        if abs(got - _brute_ospa(a.tolist(), b.tolist(), 100.0)) > 1e-9:
            return False, f"mismatch for sizes {len(a)}, {len(b)}"
    return True, f"{trials} point-set pairs"


def check_update(rng):
    """Scalar re-evaluation of the GM-PHD detection weights."""
    d = 4
    means = rng.uniform(20, 80, (2, d))
    covs = np.stack([np.diag(rng.uniform(5, 30, d)) for _ in range(2)])
    targets = TargetSet(means, covs, np.array([0.8, 0.6]), np.array([0, 1]), np.array([5, 5]),
                        np.zeros((2, 2)), np.zeros(2, dtype=np.int64), 1)
    z = MeasurementSet(1, means + rng.normal(0, 3, (2, d)))
    cfg = UpdateConfig(R=10 * np.eye(d), p_detect=0.9, clutter_rate=2.0, area=1e4, size_span=(100.0, 100.0))
    out = kalman_update(targets, z, cfg, prune=False)
    kappa = 2.0 / (1e4 * 100 * 100)
    for zi, zz in enumerate(z.boxes):
        q = []
        for j in range(2):
            s = np.diag(covs[j]) + 10.0
            q.append(math.prod(math.exp(-0.5 * (zz[t] - means[j, t]) ** 2 / s[t]) / math.sqrt(2 * math.pi * s[t])
                               for t in range(d)))
        denom = kappa + sum(0.9 * w * qq for w, qq in zip((0.8, 0.6), q))
        for j in range(2):
            want = 0.9 * (0.8, 0.6)[j] * q[j] / denom
            got = out.weights[j * 2 + zi]
            if abs(got - want) > 1e-9:
                return False, f"weight ({j},{zi}) {got} != {want}"
    return True, "2 components x 2 measurements"


def check_gradient(rng):
    params = convlstm.init_params(2, seed=int(rng.integers(1 << 30)))
    xs = rng.normal(size=(3, 6, 6))
    target = rng.normal(size=(6, 6))
    _, g = convlstm.loss_and_grad(params, xs, target, "kl", relu_output=False)
    worst = 0.0
    flat = params.flat()
    gflat = g.flat()
    for idx in rng.choice(flat.size, 12, replace=False):
        def f(delta):
            p = params.copy()
            arrs = list(p.arrays().values())
            off = idx
            for a in arrs:
                if off < a.size:
                    a.flat[off] += delta
                    break
                off -= a.size
            return convlstm.loss_and_grad(p, xs, target, "kl", relu_output=False)[0]
        h = 1e-6
        fd = (f(h) - f(-h)) / (2 * h)
        worst = max(worst, abs(fd - gflat[idx]) / max(1e-8, abs(fd) + abs(gflat[idx])))
    return worst < 1e-3, f"worst relative error {worst:.2e}"


def check_conservation(rng, trials=20):
    grid = GridSpec((0, 0), (160, 120), 10)
    for _ in range(trials):
        prev = PhdMap(grid, rng.uniform(0, 1e-3, grid.shape))
        raw = rng.normal(0, 1e-3, grid.shape)
        mass = float(rng.uniform(0.5, 10))
        out = postprocess_prediction(raw, grid, prev, 3, mass)
        if abs(out.mass() - mass) > 1e-6 * mass:
            return False, f"mass {out.mass()} != {mass}"
    return True, f"{trials} random maps"


def check_ages(rng):
    cfg = AssocConfig()
    ok = age_update(5, True, cfg) == 6 and age_update(5, False, cfg) == 3
    return ok, "(5, survive) -> 6, (5, decay) -> 3"


CHECKS = [
    ("hungarian", check_hungarian),
    ("ospa", check_ospa),
    ("gm-phd update", check_update),
    ("bptt gradient", check_gradient),
    ("mass conservation", check_conservation),
    ("age algebra", check_ages),
]


def run_all(seed=0, out=print):
    """Run every check; returns True when all pass."""
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {name:<18} {detail} ({time.perf_counter() - t0:.2f}s)")
    return all_ok
