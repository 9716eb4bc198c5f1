"""Layers, losses, optimizer, finite-difference checks, checkpoints.

Everything here is built on the Tensor autodiff core.  Parameter
registration is ordered (insertion order) so checkpoints are stable and
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7       # probabilities clamped to [PROB_EPS, 1 - PROB_EPS]
VAR_FLOOR = 1e-4      # variance floor applied via softplus parameterization

CHECKPOINT_MAGIC = b"GHCKPT1\n"


class ShapeMismatch(ValueError):
    pass


class CountMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class NonPositiveVariance(ValueError):
    pass


# --------------------------------------------------------------------------
# modules


class Module:
    """Tiny parameter container: ordered name -> Tensor registry."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def register(self, name, value):
        arr = np.asarray(value, dtype=T.DEFAULT_DTYPE)
        p = Tensor(arr, requires_grad=True)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays, strict=True):
        own = dict(self.named_parameters())
        for name, arr in arrays.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            if own[name].data.shape != arr.shape:
                raise ShapeMismatch(f"{name}: {own[name].data.shape} vs {arr.shape}")
            own[name].data = arr.astype(T.DEFAULT_DTYPE, copy=True)


def _glorot(rng, shape, fan_in, fan_out):
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=shape)


class Linear(Module):
    def __init__(self, rng, in_dim, out_dim):
        super().__init__()
        self.w = self.register("w", _glorot(rng, (out_dim, in_dim), in_dim, out_dim))
        self.b = self.register("b", np.zeros(out_dim))

    def __call__(self, x):
        return T.matmul(x, self.w.T) + self.b


class Embedding(Module):
    def __init__(self, rng, num, dim):
        super().__init__()
        self.table = self.register("table", rng.normal(0.0, 0.1, size=(num, dim)))

    def __call__(self, idx):
        return self.table[np.asarray(idx, dtype=np.int64)]


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, pad=0):
        super().__init__()
        fan_in = cin * k * k
        self.w = self.register("w", _glorot(rng, (cout, cin, k, k), fan_in, cout))
        self.b = self.register("b", np.zeros(cout))
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class GRUCell(Module):
    """Single-layer GRU cell.

    Convention (fixed):
        z = sigmoid(W_z [x, h] + b_z)
        r = sigmoid(W_r [x, h] + b_r)
        hcand = tanh(W_h [x, r*h] + b_h)
        h' = (1 - z) * h + z * hcand
    """

    def __init__(self, rng, in_dim, hidden_dim):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        cat = in_dim + hidden_dim
        self.w_z = self.register("w_z", _glorot(rng, (hidden_dim, cat), cat, hidden_dim))
        self.b_z = self.register("b_z", np.zeros(hidden_dim))
        self.w_r = self.register("w_r", _glorot(rng, (hidden_dim, cat), cat, hidden_dim))
        self.b_r = self.register("b_r", np.zeros(hidden_dim))
        self.w_h = self.register("w_h", _glorot(rng, (hidden_dim, cat), cat, hidden_dim))
        self.b_h = self.register("b_h", np.zeros(hidden_dim))

    def __call__(self, x, h):
        return gru_step(self, x, h)


def gru_step(cell, x, h):
    """One GRU step; x: (..., I), h: (..., D) -> h': (..., D)."""
    x, h = T.as_tensor(x), T.as_tensor(h)
    if x.shape[-1] != cell.in_dim or h.shape[-1] != cell.hidden_dim:
        raise ShapeMismatch(f"gru_step got x{x.shape}, h{h.shape} for "
                            f"I={cell.in_dim}, D={cell.hidden_dim}")
    xh = T.concat([x, h], axis=-1)
    z = T.sigmoid(T.matmul(xh, cell.w_z.T) + cell.b_z)
    r = T.sigmoid(T.matmul(xh, cell.w_r.T) + cell.b_r)
    xrh = T.concat([x, T.mul(r, h)], axis=-1)
    hcand = T.tanh(T.matmul(xrh, cell.w_h.T) + cell.b_h)
    return T.mul(1.0 - z, h) + T.mul(z, hcand)


def gru_sequence(cell, xs, h0):
    """Unroll over a (N, I) step sequence with one initial hidden (D,).

    The input projections of all steps run as a single matmul; only the
    (D x D) recurrent part runs stepwise.  Equivalent to folding gru_step.
    Returns the (N, D) hidden states after each step.
    """
    xs = T.as_tensor(xs)
    i = cell.in_dim
    wxz, whz = cell.w_z[:, :i], cell.w_z[:, i:]
    wxr, whr = cell.w_r[:, :i], cell.w_r[:, i:]
    wxh, whh = cell.w_h[:, :i], cell.w_h[:, i:]
    xz = T.matmul(xs, wxz.T) + cell.b_z
    xr = T.matmul(xs, wxr.T) + cell.b_r
    xh = T.matmul(xs, wxh.T) + cell.b_h
    h = T.as_tensor(h0)
    outs = []
    n = xs.shape[0]
    for t in range(n):
        z = T.sigmoid(xz[t] + T.matmul(h, whz.T))
        r = T.sigmoid(xr[t] + T.matmul(h, whr.T))
        cand = T.tanh(xh[t] + T.matmul(T.mul(r, h), whh.T))
        h = T.mul(1.0 - z, h) + T.mul(z, cand)
        outs.append(h)
    return T.stack(outs, axis=0)


# --------------------------------------------------------------------------
# heatmap targets and losses


@dataclass
class FocalConfig:
    alpha: float = 2.0
    beta: float = 4.0
    sigma_min: float = 1.0
    sigma_radius_div: float = 3.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("focal alpha/beta must be positive")


@dataclass
class HeatmapTarget:
    """Gaussian-smoothed center map plus per-center offset targets.

    heat: (C', H', W') with value 1.0 exactly at each center cell;
    overlapping kernels combine by elementwise max.
    """

    heat: np.ndarray
    centers: list = field(default_factory=list)  # (class_idx, cell_xy, offset_xy)
    num_centers: int = 0


def kernel_sigma(footprint_radius, cfg: FocalConfig | None = None):
    cfg = cfg or FocalConfig()
    return max(cfg.sigma_min, footprint_radius / cfg.sigma_radius_div)


def gaussian_kernel_targets(centers, grid_shape, cfg: FocalConfig | None = None):
    """Build a HeatmapTarget.

    centers: iterable of (class_idx, (cx, cy), footprint_radius) where
    (cx, cy) are continuous coordinates in heatmap-grid units.  The peak
    cell is floor(cx), floor(cy); the offset target is the residual from
    that cell's center, in grid units.
    """
    cfg = cfg or FocalConfig()
    nc, gh, gw = grid_shape
    heat = np.zeros((nc, gh, gw), dtype=T.DEFAULT_DTYPE)
    ys, xs = np.mgrid[0:gh, 0:gw]
    recorded = []
    for cls, (cx, cy), radius in centers:
        ix = min(int(np.floor(cx)), gw - 1)
        iy = min(int(np.floor(cy)), gh - 1)
        sigma = kernel_sigma(radius, cfg)
        kern = np.exp(-(((xs - ix) ** 2 + (ys - iy) ** 2) / (2.0 * sigma ** 2)))
        np.maximum(heat[cls], kern, out=heat[cls])
        recorded.append((cls, (ix, iy), (cx - (ix + 0.5), cy - (iy + 0.5))))
    return HeatmapTarget(heat=heat, centers=recorded, num_centers=len(recorded))


def focal_heatmap_loss(pred, target: HeatmapTarget, cfg: FocalConfig | None = None):
    """Penalty-reduced pixelwise focal loss over the center heatmap.

    pred: Tensor of probabilities, same shape as target.heat (clamped to
    (0, 1) internally).  Normalized by the number of centers.
    """
    cfg = cfg or FocalConfig()
    pred = T.as_tensor(pred)
    if pred.shape != target.heat.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.heat.shape}")
    y = target.heat
    pos = (y >= 1.0).astype(T.DEFAULT_DTYPE)
    neg = 1.0 - pos
    p = T.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    # (1-p)^alpha and p^alpha via exp(alpha*log(.)): p is clamped away from {0,1}
    pow_1mp = T.exp(T.mul(T.log(1.0 - p), cfg.alpha))
    pow_p = T.exp(T.mul(T.log(p), cfg.alpha))
    pos_term = T.mul(pow_1mp, T.log(p))
    neg_term = T.mul((1.0 - y ** cfg.beta), T.mul(pow_p, T.log(1.0 - p)))
    total = T.sum_(T.mul(pos_term, pos)) + T.sum_(T.mul(neg_term, neg))
    return T.mul(total, -1.0 / max(target.num_centers, 1))


def focal_loss_batched(pred, heat, inv_m):
    """Batched focal loss: pred/heat (N, C, H, W), inv_m (N,) holding each
    sample's 1/max(M,1).  Sum over samples of the per-sample loss."""
    pred = T.as_tensor(pred)
    if pred.shape != heat.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {heat.shape}")
    cfg = FocalConfig()
    pos = (heat >= 1.0).astype(T.DEFAULT_DTYPE)
    neg = 1.0 - pos
    p = T.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    pow_1mp = T.exp(T.mul(T.log(1.0 - p), cfg.alpha))
    pow_p = T.exp(T.mul(T.log(p), cfg.alpha))
    pos_term = T.mul(T.mul(pow_1mp, T.log(p)), pos)
    neg_term = T.mul((1.0 - heat ** cfg.beta), T.mul(T.mul(pow_p, T.log(1.0 - p)), neg))
    per_sample = T.sum_(pos_term + neg_term, axis=(1, 2, 3))
    w = np.asarray(inv_m, dtype=T.DEFAULT_DTYPE)
    return T.mul(T.sum_(T.mul(per_sample, w)), -1.0)


def offset_l1_loss(pred_offsets, target_offsets):
    """Mean over centers of the L1 offset error, summed over x and y."""
    pred_offsets = T.as_tensor(pred_offsets)
    tgt = np.asarray(target_offsets, dtype=T.DEFAULT_DTYPE)
    if pred_offsets.shape != tgt.shape:
        raise CountMismatch(f"{pred_offsets.shape} vs {tgt.shape}")
    m = tgt.shape[0] if tgt.ndim == 2 else 1
    return T.mul(T.sum_(T.abs_(pred_offsets - tgt)), 1.0 / max(m, 1))


def gaussian_log_likelihood(delta, mu, var):
    """Log density of `delta` under a diagonal 2-D Normal(mu, var).

    All arguments (..., 2); returns the summed log density (scalar for a
    single point, batch-summed otherwise divided by caller).
    """
    delta, mu, var = T.as_tensor(delta), T.as_tensor(mu), T.as_tensor(var)
    if np.any(var.data <= 0):
        raise NonPositiveVariance("variance must be positive")
    ll = -0.5 * np.log(2.0 * np.pi) - T.mul(T.log(var), 0.5) \
        - T.div(T.square(delta - mu), T.mul(var, 2.0))
    return T.sum_(ll)


def cross_entropy(logits, target_index):
    """-log softmax(logits)[target] for a 1-D logit vector."""
    logits = T.as_tensor(logits)
    k = logits.shape[-1]
    idx = int(target_index)
    if not 0 <= idx < k:
        raise IndexOutOfRange(f"target {idx} out of range for {k} classes")
    return T.mul(T.log_softmax(logits)[idx], -1.0)


def cross_entropy_rows(logits, targets, weights=None):
    """Batched CE: logits (N, K), targets (N,), optional per-row weights.

    Returns the SUM over rows (caller divides by its own N).
    """
    logits = T.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets {targets.shape} for logits {logits.shape}")
    if np.any((targets < 0) | (targets >= k)):
        raise IndexOutOfRange("target index out of range")
    picked = T.gather(T.log_softmax(logits, axis=-1), (np.arange(n), targets))
    if weights is not None:
        picked = T.mul(picked, np.asarray(weights, dtype=T.DEFAULT_DTYPE))
    return T.mul(T.sum_(picked), -1.0)


def log_prob_rows(logits, targets):
    """Per-row log softmax picked at targets: (N,) tensor."""
    logits = T.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if np.any((targets < 0) | (targets >= k)):
        raise IndexOutOfRange("target index out of range")
    return T.gather(T.log_softmax(logits, axis=-1), (np.arange(n), targets))


def entropy_rows(logits):
    """Sum over rows of the categorical entropy."""
    logits = T.as_tensor(logits)
    logp = T.log_softmax(logits, axis=-1)
    return T.mul(T.sum_(T.mul(T.exp(logp), logp)), -1.0)


# --------------------------------------------------------------------------
# finite differences


def grad_check(fn, inputs, h=1e-5, rel_floor=1e-3):
    """Compare reverse-mode grads of scalar fn(*inputs) to central differences.

    Returns the max guarded relative error over all input elements:
    |ad - fd| / max(|ad| + |fd|, rel_floor).
    """
    inputs = [T.as_tensor(x) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for x in inputs:
        ad = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(*inputs).item()
            flat[i] = orig - h
            lo = fn(*inputs).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * h)
        fd = fd.reshape(x.data.shape)
        err = np.abs(ad - fd) / np.maximum(np.abs(ad) + np.abs(fd), rel_floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


# --------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer with global grad-norm clipping."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, clip_norm=0.5):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.frozen: set[int] = set()

    def freeze(self, params):
        ids = {id(p) for p in params}
        for i, p in enumerate(self.params):
            if id(p) in ids:
                self.frozen.add(i)

    def step(self):
        """Update parameters that received gradients; moment buffers of
        untouched parameters are left alone."""
        live = [(i, p, p.grad) for i, p in enumerate(self.params)
                if p.grad is not None and i not in self.frozen]
        if not live:
            return
        if self.clip_norm:
            total = np.sqrt(sum(float((g * g).sum()) for _, _, g in live))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                live = [(i, p, g * scale) for i, p, g in live]
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for i, p, g in live:
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            p.data = p.data - self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        out = {"_t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["_t"][0])
        for i in range(len(self.params)):
            self.m[i] = arrays[f"m{i}"].copy()
            self.v[i] = arrays[f"v{i}"].copy()


# --------------------------------------------------------------------------
# checkpoints: versioned header + json manifest + raw little-endian buffers


def save_checkpoint(path, sections):
    """sections: {section_name: {array_name: np.ndarray}}."""
    import json

    manifest = {}
    blobs = []
    offset = 0
    for sec, arrays in sections.items():
        manifest[sec] = {}
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            manifest[sec][name] = {
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    import json

    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        head_len = int.from_bytes(f.read(8), "little")
        manifest = json.loads(f.read(head_len).decode())
        payload = f.read()
    sections = {}
    for sec, arrays in manifest.items():
        sections[sec] = {}
        for name, meta in arrays.items():
            raw = payload[meta["offset"]:meta["offset"] + meta["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"])
            sections[sec][name] = arr.copy()
    return sections
