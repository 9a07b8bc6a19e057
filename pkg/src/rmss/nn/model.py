"""Per-point encoder with k-NN mean pooling, and the segmentation head.

Parameters live in one flat float64 vector; :class:`ParamLayout` maps layer
names to views into it. Forward functions return a cache consumed by the
matching backward function.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from ..core import N_INPUT_CHANNELS, N_OUT


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _silu_grad(a):
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


# name -> (function, derivative), both of the pre-activation
ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "silu": (lambda a: a * _sigmoid(a), _silu_grad),
    "softplus": (lambda a: np.logaddexp(0.0, a), _sigmoid),
}


@dataclass
class EncoderConfig:
    k_neighbors: int = 8
    hidden: tuple = (64, 64)
    out_dim: int = N_OUT
    head_hidden: tuple = (32,)
    # fixed per-channel divisors for (x, y, z, v_comp, rcs)
    input_scale: tuple = (20.0, 20.0, 1.0, 5.0, 10.0)
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.head_hidden = tuple(int(h) for h in self.head_hidden)
        self.input_scale = tuple(float(s) for s in self.input_scale)
        if self.out_dim != N_OUT:
            raise ValueError(f"output dimension is fixed at {N_OUT}")
        if len(self.hidden) != 2:
            raise ValueError("encoder uses exactly two hidden widths")
        if len(self.input_scale) != N_INPUT_CHANNELS:
            raise ValueError("input_scale needs one entry per input channel")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class ParamLayout:
    def __init__(self, shapes):
        self.names = [n for n, _ in shapes]
        self.shapes = {n: tuple(s) for n, s in shapes}
        self.offsets = {}
        off = 0
        for n, s in shapes:
            self.offsets[n] = off
            off += int(np.prod(s))
        self.size = off

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        off = self.offsets[name]
        shape = self.shapes[name]
        return flat[off:off + int(np.prod(shape))].reshape(shape)

    def unpack(self, flat: np.ndarray) -> dict:
        return {n: self.view(flat, n) for n in self.names}

    def pack(self, arrays: dict) -> np.ndarray:
        flat = np.zeros(self.size)
        for n in self.names:
            self.view(flat, n)[...] = arrays[n]
        return flat

    def prefixed(self, prefix: str) -> "ParamLayout":
        return ParamLayout([(prefix + n, self.shapes[n]) for n in self.names])


def encoder_layout(cfg: EncoderConfig) -> ParamLayout:
    h1, h2 = cfg.hidden
    return ParamLayout([
        ("enc.w1", (N_INPUT_CHANNELS, h1)), ("enc.b1", (h1,)),
        ("enc.w2", (h1, h2)), ("enc.b2", (h2,)),
        ("enc.w3", (2 * h2, cfg.out_dim)), ("enc.b3", (cfg.out_dim,)),
    ])


def head_layout(cfg: EncoderConfig) -> ParamLayout:
    shapes, width = [], cfg.out_dim
    for k, h in enumerate(cfg.head_hidden, start=1):
        shapes += [(f"head.w{k}", (width, h)), (f"head.b{k}", (h,))]
        width = h
    k = len(cfg.head_hidden) + 1
    shapes += [(f"head.w{k}", (width, 2)), (f"head.b{k}", (2,))]
    return ParamLayout(shapes)


def _glorot(rng, layout: ParamLayout) -> np.ndarray:
    flat = np.zeros(layout.size)
    for n in layout.names:
        shape = layout.shapes[n]
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            layout.view(flat, n)[...] = rng.uniform(-limit, limit, shape)
    return flat


def init_encoder(cfg: EncoderConfig, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng([cfg.init_seed if seed is None else seed, 1])
    return _glorot(rng, encoder_layout(cfg))


def init_head(cfg: EncoderConfig, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng([cfg.init_seed if seed is None else seed, 2])
    return _glorot(rng, head_layout(cfg))


def knn_indices(xyz: np.ndarray, k: int) -> np.ndarray:
    """N x k' neighbour indices, k' = min(k, N - 1); self is used only when N == 1."""
    n = len(xyz)
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    k = min(k, n - 1)
    d = cdist(xyz, xyz)
    np.fill_diagonal(d, np.inf)
    # stable sort: equidistant neighbours resolve to the lowest index
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def batch_pooling(neighbour_blocks: list) -> sparse.csr_matrix:
    """Block-diagonal mean-pooling operator for scans stacked row-wise."""
    indices, counts = [], []
    off = 0
    for nbrs in neighbour_blocks:
        n, k = nbrs.shape
        indices.append((nbrs + off).ravel())
        counts.append(np.full(n, k, dtype=np.int64))
        off += n
    counts = np.concatenate(counts) if counts else np.zeros(0, np.int64)
    idx = np.concatenate(indices) if indices else np.zeros(0, np.int64)
    indptr = np.r_[0, np.cumsum(counts)]
    data = np.repeat(1.0 / np.maximum(counts, 1), counts)
    return sparse.csr_matrix((data, idx, indptr), shape=(off, off))


def pooling_matrix(neighbours: list) -> sparse.csr_matrix:
    return batch_pooling([neighbours])


def encoder_forward(params: np.ndarray, layout: ParamLayout, x: np.ndarray,
                    pool: sparse.csr_matrix, cfg: EncoderConfig, keep_cache: bool = True):
    """Representations for stacked input rows ``x`` (N x 5, unscaled)."""
    p = layout.unpack(params)
    if len(x) == 0:
        return np.zeros((0, cfg.out_dim)), None
    act, _ = ACTIVATIONS[cfg.activation]
    xs = x / np.asarray(cfg.input_scale)
    a1 = xs @ p["enc.w1"] + p["enc.b1"]
    h1 = act(a1)
    a2 = h1 @ p["enc.w2"] + p["enc.b2"]
    h2 = act(a2)
    pooled = pool @ h2
    cat = np.hstack([h2, pooled])
    out = cat @ p["enc.w3"] + p["enc.b3"]
    cache = (xs, a1, h1, a2, cat, pool, cfg.activation) if keep_cache else None
    return out, cache


def encoder_backward(params: np.ndarray, layout: ParamLayout, cache, grad_out: np.ndarray,
                     want_input: bool = False):
    p = layout.unpack(params)
    xs, a1, h1, a2, cat, pool, activation = cache
    _, dact = ACTIVATIONS[activation]
    width = a2.shape[1]
    g = np.zeros(layout.size)
    gv = layout.unpack(g)
    gv["enc.w3"][...] = cat.T @ grad_out
    gv["enc.b3"][...] = grad_out.sum(axis=0)
    g_cat = grad_out @ p["enc.w3"].T
    g_h2 = g_cat[:, :width] + pool.T @ g_cat[:, width:]
    g_a2 = g_h2 * dact(a2)
    gv["enc.w2"][...] = h1.T @ g_a2
    gv["enc.b2"][...] = g_a2.sum(axis=0)
    g_a1 = (g_a2 @ p["enc.w2"].T) * dact(a1)
    gv["enc.w1"][...] = xs.T @ g_a1
    gv["enc.b1"][...] = g_a1.sum(axis=0)
    if want_input:
        return g, g_a1 @ p["enc.w1"].T
    return g


def head_forward(params: np.ndarray, layout: ParamLayout, reps: np.ndarray,
                 activation: str = "tanh"):
    """Logits plus a cache of ``(inputs, pre-activations)`` per hidden layer."""
    p = layout.unpack(params)
    act, _ = ACTIVATIONS[activation]
    n_layers = len(layout.names) // 2
    acts, pre = [reps], []
    h = reps
    for k in range(1, n_layers):
        a = h @ p[f"head.w{k}"] + p[f"head.b{k}"]
        h = act(a)
        pre.append(a)
        acts.append(h)
    logits = h @ p[f"head.w{n_layers}"] + p[f"head.b{n_layers}"]
    return logits, (acts, pre, activation)


def head_backward(params: np.ndarray, layout: ParamLayout, cache, grad_logits: np.ndarray):
    """Returns ``(parameter gradient, gradient w.r.t. the representations)``."""
    acts, pre, activation = cache
    _, dact = ACTIVATIONS[activation]
    p = layout.unpack(params)
    n_layers = len(layout.names) // 2
    g = np.zeros(layout.size)
    gv = layout.unpack(g)
    delta = grad_logits
    for k in range(n_layers, 0, -1):
        a = acts[k - 1]
        gv[f"head.w{k}"][...] = a.T @ delta
        gv[f"head.b{k}"][...] = delta.sum(axis=0)
        delta = delta @ p[f"head.w{k}"].T
        if k > 1:
            delta = delta * dact(pre[k - 2])
    return g, delta


class Network:
    """Encoder plus head over a single flat parameter vector (encoder first)."""

    def __init__(self, cfg: EncoderConfig, params: np.ndarray | None = None):
        self.cfg = cfg
        self.enc_layout = encoder_layout(cfg)
        self.head_layout = head_layout(cfg)
        self.layout = ParamLayout([(n, self.enc_layout.shapes[n]) for n in self.enc_layout.names]
                                  + [(n, self.head_layout.shapes[n]) for n in self.head_layout.names])
        self.params = np.zeros(self.layout.size) if params is None else np.asarray(params, float)

    @property
    def n_enc(self) -> int:
        return self.enc_layout.size

    def encoder_params(self, params=None) -> np.ndarray:
        return (self.params if params is None else params)[:self.n_enc]

    def head_params(self, params=None) -> np.ndarray:
        return (self.params if params is None else params)[self.n_enc:]

    def forward(self, x, pool, params=None):
        params = self.params if params is None else params
        reps, enc_cache = encoder_forward(self.encoder_params(params), self.enc_layout, x, pool, self.cfg)
        logits, head_cache = head_forward(self.head_params(params), self.head_layout, reps,
                                          self.cfg.activation)
        return logits, (enc_cache, head_cache)

    def backward(self, cache, grad_logits, params=None) -> np.ndarray:
        params = self.params if params is None else params
        enc_cache, head_cache = cache
        g_head, g_reps = head_backward(self.head_params(params), self.head_layout, head_cache,
                                       grad_logits)
        g_enc = encoder_backward(self.encoder_params(params), self.enc_layout, enc_cache, g_reps)
        return np.concatenate([g_enc, g_head])


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
