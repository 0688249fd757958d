"""Minimal reverse-mode autodiff over float64 NumPy arrays.

Covers exactly the layers and losses the matching/delay models need:
valid conv2d, 2x2 maxpool, global average pooling, dense, relu, sigmoid,
softmax, binary/categorical cross-entropy and the two triplet losses.
Layer inputs may carry a leading batch axis; losses average over it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

LOG_EPS = 1e-7  # clamp for cross-entropy logs
TRIPLET_MARGIN = 0.5


class Tensor:
    """A node in the computation graph.

    ``grad`` is allocated lazily by ``backward`` and accumulates across
    calls until ``zero_grad``.  Tensors built from raw data are leaves;
    ops link results to their parents with a vector-Jacobian closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, shape is {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'unset'})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _make(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every node in the graph.

    The sweep itself uses a scratch map, so calling backward twice without
    zeroing doubles the stored gradients exactly.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, shape is {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g
        else:
            node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in flows:
                flows[pid] += pg
            else:
                flows[pid] = pg


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")
    return _make(a.data + b.data, (a, b), lambda g: (g.copy(), g.copy()))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _make(a.data - b.data, (a, b), lambda g: (g.copy(), -g))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    s = float(b)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def tsum(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,),
                 lambda g: (np.full_like(a.data, g.reshape(())),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full_like(a.data, g.reshape(()) / n),))


# ---------------------------------------------------------------------------
# layers


def _batched(data: np.ndarray, want_ndim: int):
    """Promote an unbatched array to a single-element batch."""
    if data.ndim == want_ndim:
        return data, True
    if data.ndim == want_ndim - 1:
        return data[None], False
    raise ValueError(
        f"expected {want_ndim - 1}-d or {want_ndim}-d input, got shape {data.shape}"
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid (no-padding) correlation with stride (1, 1).

    x is HxWxC or BxHxWxC, w is kh x kw x C x F with odd kernel sides,
    b has length F.  Output spatial size is (H-kh+1) x (W-kw+1).
    """
    xd, batched = _batched(x.data, 4)
    if w.ndim != 4:
        raise ValueError(f"conv2d: kernels must be 4-d (kh,kw,C,F), got {w.shape}")
    kh, kw, cin, f = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    bsz, h, wd, c = xd.shape
    if c != cin:
        raise ValueError(f"conv2d: input has {c} channels but kernels expect {cin}")
    if h < kh or wd < kw:
        raise ValueError(f"conv2d: input {h}x{wd} smaller than kernel {kh}x{kw}")
    if b.shape != (f,):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match {f} filters")
    y = kernels.conv2d_forward(xd, w.data, b.data)

    def vjp(g):
        g4 = g if batched else g[None]
        g4 = np.ascontiguousarray(g4)
        gx = None
        if x.requires_grad:
            gx = kernels.conv2d_backward_input(w.data, g4, h, wd)
            if not batched:
                gx = gx[0]
        gw = gb = None
        if w.requires_grad or b.requires_grad:
            gw, gb = kernels.conv2d_backward_params(xd, g4, kh, kw)
        return gx, gw, gb

    return _make(y if batched else y[0], (x, w, b), vjp)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    The gradient routes to the argmax cell, first occurrence on ties.
    """
    xd, batched = _batched(x.data, 4)
    bsz, h, wd, c = xd.shape
    if h < 2 or wd < 2:
        raise ValueError(f"maxpool2d: input {h}x{wd} needs at least 2x2")
    y, idx = kernels.maxpool2_forward(xd)

    def vjp(g):
        g4 = np.ascontiguousarray(g if batched else g[None])
        gx = kernels.maxpool2_backward(idx, g4, h, wd)
        return (gx if batched else gx[0],)

    return _make(y if batched else y[0], (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise spatial mean: HxWxC -> C (or BxHxWxC -> BxC)."""
    xd, batched = _batched(x.data, 4)
    bsz, h, wd, c = xd.shape
    y = xd.mean(axis=(1, 2))

    def vjp(g):
        g2 = g if batched else g[None]
        gx = np.empty_like(xd)
        gx[:] = g2[:, None, None, :] / (h * wd)
        return (gx if batched else gx[0],)

    return _make(y if batched else y[0], (x,), vjp)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: y = x @ w + b with x of shape (n,) or (B, n)."""
    xd, batched = _batched(x.data, 2)
    if w.ndim != 2:
        raise ValueError(f"dense: weights must be 2-d, got {w.shape}")
    n, m = w.shape
    if xd.shape[1] != n:
        raise ValueError(f"dense: input length {xd.shape[1]} does not match weights {n}x{m}")
    if b.shape != (m,):
        raise ValueError(f"dense: bias shape {b.shape} does not match output size {m}")
    y = xd @ w.data + b.data

    def vjp(g):
        g2 = g if batched else g[None]
        gx = g2 @ w.data.T if x.requires_grad else None
        gw = xd.T @ g2
        gb = g2.sum(axis=0)
        if gx is not None and not batched:
            gx = gx[0]
        return gx, gw, gb

    return _make(y if batched else y[0], (x, w, b), vjp)


def relu(x: Tensor) -> Tensor:
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _make(s, (x,), vjp)


# ---------------------------------------------------------------------------
# losses (scalar outputs, mean over any batch axis)


def bce_loss(pred: Tensor, label) -> Tensor:
    """Binary cross-entropy; predictions are clamped away from {0, 1} logs."""
    y = np.asarray(label, dtype=np.float64)
    if y.shape != pred.shape:
        if y.size == pred.size:
            y = y.reshape(pred.shape)
        else:
            raise ValueError(f"bce_loss: {pred.shape} predictions vs {y.shape} labels")
    p = np.clip(pred.data, LOG_EPS, 1.0 - LOG_EPS)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    n = loss.size

    def vjp(g):
        active = (pred.data > LOG_EPS) & (pred.data < 1.0 - LOG_EPS)
        gp = np.where(active, (p - y) / (p * (1.0 - p)), 0.0)
        return (gp * (g.reshape(()) / n),)

    return _make(np.asarray(loss.mean()), (pred,), vjp)


def categorical_ce_loss(pred: Tensor, label) -> Tensor:
    """-log(pred[label]) with the bce clamp; pred is (K,) or (B, K)."""
    pd, batched = _batched(pred.data, 2)
    bsz, k = pd.shape
    labels = np.atleast_1d(np.asarray(label))
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"categorical_ce_loss: labels must be integers, got {labels.dtype}")
    if labels.shape != (bsz,):
        raise ValueError(f"categorical_ce_loss: expected {bsz} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"categorical_ce_loss: label {bad} outside [0, {k - 1}]")
    picked = pd[np.arange(bsz), labels]
    clamped = np.clip(picked, LOG_EPS, 1.0 - LOG_EPS)
    loss = -np.log(clamped)

    def vjp(g):
        gp = np.zeros_like(pd)
        active = (picked > LOG_EPS) & (picked < 1.0 - LOG_EPS)
        gp[np.arange(bsz), labels] = np.where(active, -1.0 / clamped, 0.0)
        gp *= g.reshape(()) / bsz
        return (gp if batched else gp[0],)

    return _make(np.asarray(loss.mean()), (pred,), vjp)


def _triplet_shapes(fa: Tensor, fp: Tensor, fn: Tensor):
    if not (fa.shape == fp.shape == fn.shape):
        raise ValueError(
            f"triplet loss: embedding shapes differ: {fa.shape}, {fp.shape}, {fn.shape}"
        )
    a, batched = _batched(fa.data, 2)
    p, _ = _batched(fp.data, 2)
    n, _ = _batched(fn.data, 2)
    return a, p, n, batched


def triplet_euclidean_loss(fa: Tensor, fp: Tensor, fn: Tensor,
                           margin: float = TRIPLET_MARGIN, hinge: bool = True) -> Tensor:
    """mean_i max(||a-p||^2 - ||a-n||^2 + margin, 0).

    ``hinge=False`` drops the max for fidelity experiments with the raw
    bracketed form.
    """
    a, p, n, batched = _triplet_shapes(fa, fp, fn)
    ap = a - p
    an = a - n
    raw = (ap * ap).sum(axis=1) - (an * an).sum(axis=1) + margin
    per = np.maximum(raw, 0.0) if hinge else raw
    bsz = a.shape[0]

    def vjp(g):
        act = (raw > 0).astype(np.float64) if hinge else np.ones(bsz)
        scale = (act * (g.reshape(()) / bsz))[:, None]
        ga = 2.0 * (ap - an) * scale
        gp = -2.0 * ap * scale
        gn = 2.0 * an * scale
        if not batched:
            ga, gp, gn = ga[0], gp[0], gn[0]
        return ga, gp, gn

    return _make(np.asarray(per.mean()), (fa, fp, fn), vjp)


def triplet_cosine_loss(fa: Tensor, fp: Tensor, fn: Tensor,
                        margin: float = TRIPLET_MARGIN) -> Tensor:
    """mean_i max(cos(a,p) - cos(a,n) + margin, 0), exactly as printed.

    Minimizing drives the anchor/positive cosine DOWN, so models trained
    with it score matches low (lower-is-match polarity downstream).
    The cosine of a zero vector is defined as 0.
    """
    a, p, n, batched = _triplet_shapes(fa, fp, fn)

    def cos_parts(u, v):
        nu = np.sqrt((u * u).sum(axis=1))
        nv = np.sqrt((v * v).sum(axis=1))
        dot = (u * v).sum(axis=1)
        ok = (nu > 1e-30) & (nv > 1e-30)
        denom = np.where(ok, nu * nv, 1.0)
        c = np.where(ok, dot / denom, 0.0)
        return c, nu, nv, ok

    cap, na_p, npos, ok_p = cos_parts(a, p)
    can, na_n, nneg, ok_n = cos_parts(a, n)
    raw = cap - can + margin
    per = np.maximum(raw, 0.0)
    bsz = a.shape[0]

    def dcos_du(u, v, c, nu, nv, ok):
        # d cos(u,v)/du = v/(|u||v|) - cos * u/|u|^2, zero when degenerate
        safe_nu = np.where(ok, nu, 1.0)
        safe_nv = np.where(ok, nv, 1.0)
        g = v / (safe_nu * safe_nv)[:, None] - c[:, None] * u / (safe_nu ** 2)[:, None]
        return np.where(ok[:, None], g, 0.0)

    def vjp(g):
        act = (raw > 0).astype(np.float64) * (g.reshape(()) / bsz)
        ga = (dcos_du(a, p, cap, na_p, npos, ok_p)
              - dcos_du(a, n, can, na_n, nneg, ok_n)) * act[:, None]
        gp = dcos_du(p, a, cap, npos, na_p, ok_p) * act[:, None]
        gn = -dcos_du(n, a, can, nneg, na_n, ok_n) * act[:, None]
        if not batched:
            ga, gp, gn = ga[0], gp[0], gn[0]
        return ga, gp, gn

    return _make(np.asarray(per.mean()), (fa, fp, fn), vjp)
