"""Single-layer convolutional LSTM regressor trained online on PDD maps.

Gate order along the first kernel axis is ``i, f, g, o`` (input, forget,
cell candidate, output); each gate owns ``filters`` consecutive channels.
Inputs are PDD maps expressed in mass per cell (density times cell area) so
their magnitude does not depend on the sampling period.
"""

from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels

GATES = ("i", "f", "g", "o")
CHECKPOINT_VERSION = 1
LOSS_EPS = 1e-8


class ColdStartError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"divergence at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class ConvLstmParams:
    wx: np.ndarray  # (4F, 1, 3, 3)
    wh: np.ndarray  # (4F, F, 3, 3)
    b: np.ndarray  # (4F,)
    w_out: np.ndarray  # (F,)
    b_out: np.ndarray  # (1,)

    @property
    def filters(self):
        return self.w_out.shape[0]

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def map(self, fn, *others):
        return ConvLstmParams(**{k: fn(v, *(o.arrays()[k] for o in others))
                                 for k, v in self.arrays().items()})

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def flat(self):
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def n_params(self):
        return int(sum(v.size for v in self.arrays().values()))

    def gate(self, name):
        """``(K_x, K_h, bias)`` slices of one gate."""
        k = GATES.index(name)
        s = slice(k * self.filters, (k + 1) * self.filters)
        return self.wx[s], self.wh[s], self.b[s]

    def kernel(self):
        return np.concatenate([self.wx, self.wh], axis=1)

    def check(self):
        f = self.filters
        shapes = {"wx": (4 * f, 1, 3, 3), "wh": (4 * f, f, 3, 3), "b": (4 * f,),
                  "w_out": (f,), "b_out": (1,)}
        for k, v in self.arrays().items():
            if v.shape != shapes[k]:
                raise ValueError(f"parameter {k} has shape {v.shape}, expected {shapes[k]}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {k} is not finite")


def init_params(filters=16, seed=0, readout_bias=1.0):
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation.

    The read-out bias starts at ``readout_bias`` so that the output ReLU is
    initially active everywhere.
    """
    rng = np.random.default_rng(seed)
    f = filters
    s_gate = 1.0 / np.sqrt((1 + f) * 9)
    s_out = 1.0 / np.sqrt(f)
    return ConvLstmParams(
        wx=rng.uniform(-s_gate, s_gate, (4 * f, 1, 3, 3)),
        wh=rng.uniform(-s_gate, s_gate, (4 * f, f, 3, 3)),
        b=rng.uniform(-s_gate, s_gate, 4 * f),
        w_out=rng.uniform(-s_out, s_out, f),
        b_out=np.array([float(readout_bias)]),
    )


@dataclass
class ConvLstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, filters, shape):
        return cls(np.zeros((filters,) + tuple(shape)), np.zeros((filters,) + tuple(shape)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cell(kernel, bias, x, h, c):
    inp = np.concatenate([x[None], h], axis=0)
    z = kernels.conv3x3(inp, kernel) + bias[:, None, None]
    f = h.shape[0]
    i = _sigmoid(z[:f])
    fg = _sigmoid(z[f:2 * f])
    g = np.tanh(z[2 * f:3 * f])
    o = _sigmoid(z[3 * f:])
    c_new = fg * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (inp, i, fg, g, o, c, tc)


def forward_step(params, state, x):
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if state.h.shape != (params.filters,) + x.shape or state.c.shape != state.h.shape:
        raise ValueError("state and input shapes are inconsistent")
    h, c, _ = _cell(params.kernel(), params.b, x, state.h, state.c)
    return ConvLstmState(h, c)


def readout(params, h):
    return np.tensordot(params.w_out, h, axes=1) + params.b_out[0]


def predict(params, batch, relu_output=True):
    """Many-to-one prediction of the next PDD map (network units)."""
    xs = batch.inputs() if isinstance(batch, PddBatch) else np.asarray(batch, dtype=float)
    if len(xs) == 0:
        raise ColdStartError("cold start: empty PDD batch")
    state = ConvLstmState.zeros(params.filters, xs[0].shape)
    for x in xs:
        state = forward_step(params, state, x)
    y = readout(params, state.h)
    return np.maximum(y, 0.0) if relu_output else y


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _shift_normalize(a, eps=LOSS_EPS):
    a = np.asarray(a, dtype=float)
    j = int(np.argmin(a))
    u = a - a.flat[j] + eps
    s = u.sum()
    return u, s, u / s, j


def kl_loss(pred, target):
    """KL(target || pred) between min-shifted, sum-normalised maps."""
    _, _, p, _ = _shift_normalize(pred)
    _, _, t, _ = _shift_normalize(target)
    return float(np.sum(t * (np.log(t) - np.log(p))))


def jsd_loss(pred, target):
    """Symmetrised divergence KL(t||p) + KL(p||t) on the same normalised maps."""
    _, _, p, _ = _shift_normalize(pred)
    _, _, t, _ = _shift_normalize(target)
    lr = np.log(t) - np.log(p)
    return float(np.sum(t * lr) - np.sum(p * lr))


def loss_and_grad_pred(pred, target, loss="kl"):
    """Loss value and its gradient with respect to the raw ``pred`` array."""
    u, s, p, j = _shift_normalize(pred)
    _, _, t, _ = _shift_normalize(target)
    lr = np.log(t) - np.log(p)
    if loss == "kl":
        value = np.sum(t * lr)
        g = -t / u + 1.0 / s
    elif loss == "jsd":
        value = np.sum(t * lr) - np.sum(p * lr)
        a = -t / p + (1.0 - lr)  # d/dp of KL(t||p) + KL(p||t)
        g = (a - np.sum(a * p)) / s
    else:
        raise ValueError(f"unknown loss {loss!r}")
    grad = g.copy()
    grad.flat[j] -= g.sum()
    return float(value), grad


# ---------------------------------------------------------------------------
# backpropagation through time
# ---------------------------------------------------------------------------


def objective(params, batch, target, loss="kl", relu_output=True, l2_kernel=0.0):
    """``(data_loss, penalty, grads)`` for one ``batch -> target`` pair.

    ``grads`` is the gradient of ``data_loss + penalty``.
    """
    xs = batch.inputs() if isinstance(batch, PddBatch) else np.asarray(batch, dtype=float)
    if len(xs) == 0:
        raise ColdStartError("cold start: empty PDD batch")
    tgt = np.asarray(getattr(target, "values", target), dtype=float)
    kernel = params.kernel()
    f = params.filters
    h = np.zeros((f,) + xs[0].shape)
    c = np.zeros_like(h)
    caches = []
    for x in xs:
        h, c, cache = _cell(kernel, params.b, x, h, c)
        caches.append(cache)
    y = readout(params, h)
    pred = np.maximum(y, 0.0) if relu_output else y
    value, dpred = loss_and_grad_pred(pred, tgt, loss)
    dy = dpred * (y > 0) if relu_output else dpred

    grads = params.zeros_like()
    grads.w_out = np.tensordot(h, dy, axes=([1, 2], [0, 1]))
    grads.b_out = np.array([dy.sum()])
    dh = params.w_out[:, None, None] * dy[None]
    dc = np.zeros_like(dh)
    dkernel = np.zeros_like(kernel)
    db = np.zeros_like(params.b)
    for inp, i, fg, g, o, c_prev, tc in reversed(caches):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * fg
        dz = np.concatenate([di * i * (1 - i), df * fg * (1 - fg), dg * (1 - g * g), do * o * (1 - o)])
        dinp, dk = kernels.conv3x3_backward(inp, kernel, dz)
        dkernel += dk
        db += dz.sum(axis=(1, 2))
        dh = dinp[1:]
    grads.wx = dkernel[:, :1].copy()
    grads.wh = dkernel[:, 1:].copy()
    grads.b = db
    penalty = 0.0
    if l2_kernel:
        for k in ("wx", "wh", "w_out"):
            w = getattr(params, k)
            penalty += l2_kernel * float(np.sum(w * w))
            setattr(grads, k, getattr(grads, k) + 2.0 * l2_kernel * w)
    return value, penalty, grads


def loss_and_grad(params, batch, target, loss="kl", relu_output=True, l2_kernel=0.0):
    """Total objective (data loss plus kernel penalty) and its gradients."""
    value, penalty, grads = objective(params, batch, target, loss, relu_output, l2_kernel)
    return value + penalty, grads


def grad(params, batch, target, loss="kl", relu_output=True, l2_kernel=0.0):
    return loss_and_grad(params, batch, target, loss, relu_output, l2_kernel)[1]


# ---------------------------------------------------------------------------
# optimiser and online training
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: ConvLstmParams
    v: ConvLstmParams
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.99, eps=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, opt):
    t = opt.t + 1
    b1, b2 = opt.beta1, opt.beta2
    m = opt.m.map(lambda m_, g_: b1 * m_ + (1 - b1) * g_, grads)
    v = opt.v.map(lambda v_, g_: b2 * v_ + (1 - b2) * g_ * g_, grads)
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    new = params.map(lambda p_, m_, v_: p_ - opt.lr * (m_ / c1) / (np.sqrt(v_ / c2) + opt.eps), m, v)
    return new, AdamState(m, v, t, opt.lr, b1, b2, opt.eps)


def train_online(params, opt, batch, target, epochs=20, loss="kl", relu_output=True, l2_kernel=0.0):
    """Run ``epochs`` gradient steps on one pair; returns ``(params, opt, losses)``.

    ``losses[t]`` is the data loss (without the kernel penalty) evaluated
    before step ``t``.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    losses = []
    for epoch in range(epochs):
        value, penalty, g = objective(params, batch, target, loss, relu_output, l2_kernel)
        if not np.isfinite(value + penalty) or not np.all(np.isfinite(g.flat())):
            raise DivergenceError(epoch, value)
        losses.append(value)
        params, opt = adam_step(params, g, opt)
    return params, opt, losses


# ---------------------------------------------------------------------------
# PDD batch
# ---------------------------------------------------------------------------


@dataclass
class PddBatch:
    """Rolling window of the most recent PDD maps, oldest first."""

    capacity: int = 24
    maps: deque = field(default_factory=deque)

    def __post_init__(self):
        self.maps = deque(self.maps, maxlen=self.capacity)

    def __len__(self):
        return len(self.maps)

    @property
    def full(self):
        return len(self.maps) == self.capacity

    @property
    def grid(self):
        return self.maps[0].grid

    def append(self, pdd_map):
        if self.maps and pdd_map.grid != self.grid:
            raise ValueError("PDD batch maps must share one grid")
        self.maps.append(pdd_map)

    def inputs(self):
        if not self.maps:
            return np.zeros((0, 0, 0))
        return np.stack([m.values * m.grid.cell_area for m in self.maps])

    def copy(self):
        return PddBatch(self.capacity, deque(self.maps))


def to_pdd_units(pred, reference):
    """Map a network output (defined up to shift and scale) back to PDD units.

    The normalised shape of ``pred`` is given the minimum and shifted total of
    the ``reference`` PDD values, inverting the loss normalisation.
    """
    _, _, shape, _ = _shift_normalize(pred)
    ref = np.asarray(reference, dtype=float)
    lo = ref.min()
    total = np.sum(ref - lo + LOSS_EPS)
    return shape * total + lo - LOSS_EPS


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_params(path, params):
    """Write an ``.npz`` checkpoint with a format version and the filter count."""
    np.savez(path, format_version=np.array(CHECKPOINT_VERSION), filters=np.array(params.filters),
             **params.arrays())


def load_params(path):
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = ConvLstmParams(**{f.name: data[f.name].copy() for f in fields(ConvLstmParams)})
    params.check()
    return params
