"""Tape-based reverse-mode differentiation over numpy arrays.

The primitive set is intentionally closed: exactly the operations the
encoder/decoder network is built from, each with a hand-written backward
pass. Ops executed while a Tape is active are recorded in execution order
(which is a valid topological order); ``Tape.backward`` replays them in
reverse, accumulating gradients additively at fan-out points.

Arrays are float32 by default; gradient verification (``grad_check``)
requires float64 because central differences are unreliable in single
precision. Spatial ops accept both a single sample ([C, H, W] etc.) and a
leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class Tensor:
    """A value node: numpy array plus the gradient accumulated by backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None) -> None:
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Records op nodes for one forward pass and drives the backward sweep."""

    _active: "Tape | None" = None

    def __init__(self) -> None:
        self._nodes: list[tuple[tuple[Tensor, ...], tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = None

    @classmethod
    def record(cls, outputs, inputs, backward) -> None:
        if cls._active is not None:
            cls._active._nodes.append((tuple(outputs), tuple(inputs), backward))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into every participating Tensor's .grad."""
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=loss.data.dtype)
        self._sweep()

    def _sweep(self) -> None:
        for outputs, inputs, fn in reversed(self._nodes):
            if all(o.grad is None for o in outputs):
                continue
            gouts = [o.grad if o.grad is not None else np.zeros_like(o.data) for o in outputs]
            gins = fn(*gouts)
            for t, g in zip(inputs, gins):
                if g is None:
                    continue
                if t.grad is None:
                    t.grad = g.astype(t.data.dtype, copy=True)
                else:
                    t.grad += g

    def __len__(self) -> int:
        return len(self._nodes)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may be a Tensor or a constant array."""
    bdata = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=a.data.dtype)
    out = Tensor(a.data + bdata)
    if isinstance(b, Tensor):
        Tape.record((out,), (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    else:
        Tape.record((out,), (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    return out


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.data * k)
    Tape.record((out,), (a,), lambda g: (g * k,))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0
    Tape.record((out,), (a,), lambda g: (g * mask,))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    Tape.record((out,), (a,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = Tensor(y)
    Tape.record((out,), (a,), lambda g: (g * y * (1.0 - y),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with x of shape [..., din] and w of shape [dout, din]."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear: x last dim {x.data.shape[-1]} != w in dim {w.data.shape[1]}")
    xd = x.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    y = x2 @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(*lead, w.data.shape[0]))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        dx = (g2 @ w.data).reshape(xd.shape)
        dw = g2.T @ x2
        if b is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    Tape.record((out,), (x, w) if b is None else (x, w, b), backward)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: ids (any int shape) -> [*ids.shape, d]. Backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[ids])

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    Tape.record((out,), (table,), backward)
    return out


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    Tape.record((out,), tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))
    return out


# ---------------------------------------------------------------------------
# spatial ops ([C, H, W] or [N, C, H, W])


def _batched(data: np.ndarray):
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ShapeError(f"expected 3- or 4-d spatial tensor, got shape {data.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct cross-correlation via im2col + one GEMM."""
    xd, squeeze = _batched(x.data)
    N, C, H, W = xd.shape
    K, C2, kh, kw = w.data.shape
    if C != C2:
        raise ShapeError(f"conv2d: input has {C} channels, weights expect {C2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel dims must be odd")
    if (H + 2 * pad - kh) % stride or (W + 2 * pad - kw) % stride:
        raise ShapeError("conv2d: output size is not integral for this stride/pad")
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(N * ho * wo, C * kh * kw)
    wmat = w.data.reshape(K, -1)
    y = cols @ wmat.T
    if b is not None:
        y = y + b.data
    y = y.reshape(N, ho, wo, K).transpose(0, 3, 1, 2)
    out = Tensor(y[0] if squeeze else y)

    def backward(g):
        gd = g[None] if squeeze else g
        gmat = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(N * ho * wo, K)
        dw = (gmat.T @ cols).reshape(w.data.shape)
        dcols = (gmat @ wmat).reshape(N, ho, wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        dx = dx[0] if squeeze else dx
        if b is not None:
            return dx, dw, gmat.sum(axis=0)
        return dx, dw

    Tape.record((out,), (x, w) if b is None else (x, w, b), backward)
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    xd, squeeze = _batched(x.data)
    N, C, H, W = xd.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {H}x{W}")
    r = xd.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = r.argmax(axis=-1)  # first max wins on ties
    y = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    out = Tensor(y[0] if squeeze else y)

    def backward(g):
        gd = g[None] if squeeze else g
        dr = np.zeros_like(r)
        np.put_along_axis(dr, idx[..., None], gd[..., None], axis=-1)
        dx = dr.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(xd.shape)
        return (dx[0] if squeeze else dx,)

    Tape.record((out,), (x,), backward)
    return out


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the two trailing spatial dims."""
    xd, squeeze = _batched(x.data)
    N, C, H, W = xd.shape
    y = xd.repeat(2, axis=2).repeat(2, axis=3)
    out = Tensor(y[0] if squeeze else y)

    def backward(g):
        gd = g[None] if squeeze else g
        dx = gd.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5))
        return (dx[0] if squeeze else dx,)

    Tape.record((out,), (x,), backward)
    return out


def spatial_flatten(x: Tensor) -> Tensor:
    """[C, H, W] -> [H*W, C] (or batched), the key/value layout for attention."""
    xd, squeeze = _batched(x.data)
    N, C, H, W = xd.shape
    y = np.ascontiguousarray(xd.transpose(0, 2, 3, 1)).reshape(N, H * W, C)
    out = Tensor(y[0] if squeeze else y)

    def backward(g):
        gd = g[None] if squeeze else g
        dx = gd.reshape(N, H, W, C).transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(dx[0] if squeeze else dx),)

    Tape.record((out,), (x,), backward)
    return out


# ---------------------------------------------------------------------------
# sequence ops


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell. Gate layout in wx/wh/b is [input, forget, cell, output].

    x: [din] or [B, din]; h, c: [dh] or [B, dh]; wx: [4*dh, din]; wh: [4*dh, dh]; b: [4*dh].
    """
    one = x.data.ndim == 1
    xd = x.data[None] if one else x.data
    hd = h.data[None] if one else h.data
    cd = c.data[None] if one else c.data
    dh = hd.shape[-1]
    if wx.data.shape != (4 * dh, xd.shape[-1]) or wh.data.shape != (4 * dh, dh) or b.data.shape != (4 * dh,):
        raise ShapeError(
            f"lstm_cell: weights {wx.data.shape}/{wh.data.shape}/{b.data.shape} inconsistent "
            f"with din={xd.shape[-1]}, dh={dh}"
        )
    z = xd @ wx.data.T + hd @ wh.data.T + b.data
    zi, zf, zg, zo = np.split(z, 4, axis=-1)
    i, f, o = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
    g_ = np.tanh(zg)
    c2 = f * cd + i * g_
    tc2 = np.tanh(c2)
    h2 = o * tc2
    out_h = Tensor(h2[0] if one else h2)
    out_c = Tensor(c2[0] if one else c2)

    def backward(gh, gc):
        ghd = gh[None] if one else gh
        gcd = gc[None] if one else gc
        dc2 = gcd + ghd * o * (1.0 - tc2 * tc2)
        dzo = ghd * tc2 * o * (1.0 - o)
        dzf = dc2 * cd * f * (1.0 - f)
        dzi = dc2 * g_ * i * (1.0 - i)
        dzg = dc2 * i * (1.0 - g_ * g_)
        dz = np.concatenate([dzi, dzf, dzg, dzo], axis=-1)
        dx = dz @ wx.data
        dhp = dz @ wh.data
        dcp = dc2 * f
        dwx = dz.T @ xd
        dwh = dz.T @ hd
        db = dz.sum(axis=0)
        if one:
            dx, dhp, dcp = dx[0], dhp[0], dcp[0]
        return dx, dhp, dcp, dwx, dwh, db

    Tape.record((out_h, out_c), (x, h, c, wx, wh, b), backward)
    return out_h, out_c


def attend(query: Tensor, keys_proj: Tensor, values: Tensor, wq: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Additive-attention core with the key projection precomputed.

    query: [dh] or [B, dh]; keys_proj: [M, da] or [B, M, da]; values: [M, df]
    or [B, M, df]; wq: [da, dh]; v: [da]. Scores e_m = v . tanh(wq@query +
    keys_proj_m); weights = softmax(e); context = sum_m weights_m values_m.
    """
    one = query.data.ndim == 1
    qd = query.data[None] if one else query.data
    kp = keys_proj.data[None] if keys_proj.data.ndim == 2 else keys_proj.data
    val = values.data[None] if values.data.ndim == 2 else values.data
    if kp.shape[1] == 0:
        raise ShapeError("attend: empty key set")
    q = qd @ wq.data.T  # [B, da]
    u = np.tanh(q[:, None, :] + kp)  # [B, M, da]
    e = u @ v.data  # [B, M]
    e = e - e.max(axis=-1, keepdims=True)
    w_ = np.exp(e)
    w_ /= w_.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bm,bmf->bf", w_, val)
    out_ctx = Tensor(ctx[0] if one else ctx)
    out_w = Tensor(w_[0] if one else w_)

    def backward(gctx, gw):
        gctxd = gctx[None] if one else gctx
        gwd = gw[None] if one else gw
        dw = gwd + np.einsum("bf,bmf->bm", gctxd, val)
        dval = w_[:, :, None] * gctxd[:, None, :]
        de = w_ * (dw - (dw * w_).sum(axis=-1, keepdims=True))
        du = de[:, :, None] * v.data  # [B, M, da]
        dv = (u * de[:, :, None]).sum(axis=(0, 1))
        dpre = du * (1.0 - u * u)
        dkp = dpre
        dq = dpre.sum(axis=1)  # [B, da]
        dquery = dq @ wq.data
        dwq = dq.T @ qd
        if one:
            dquery = dquery[0]
        if keys_proj.data.ndim == 2:  # keys shared across the batch
            dkp = dkp.sum(axis=0)
        if values.data.ndim == 2:
            dval = dval.sum(axis=0)
        return dquery, dkp, dval, dwq, dv

    Tape.record((out_ctx, out_w), (query, keys_proj, values, wq, v), backward)
    return out_ctx, out_w


def additive_attention(query: Tensor, keys: Tensor, wq: Tensor, wk: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Bahdanau-style attention: scores v.tanh(wq@query + wk@key_m), softmax, blend.

    keys: [M, df] or [B, M, df]; returns (context [.., df], weights [.., M]).
    Step loops should precompute ``linear(keys, wk)`` once and call ``attend``.
    """
    if keys.data.shape[-2] == 0:
        raise ShapeError("additive_attention: empty key set")
    proj = linear(keys, wk)
    return attend(query, proj, keys, wq, v)


def softmax_nll(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a single [V] logit vector."""
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax_nll: expected 1-d logits, got {logits.data.shape}")
    V = logits.data.shape[0]
    if not 0 <= int(target) < V:
        raise IndexError(f"target {target} out of range [0, {V})")
    return softmax_nll_batch(logits, np.array([int(target)]), reduce="sum", _reshape=(1, V))


def softmax_nll_batch(logits: Tensor, targets, weights=None, reduce: str = "mean", _reshape=None) -> Tensor:
    """Weighted NLL over rows of [B, V] logits; stable via max subtraction.

    ``weights`` (default all-ones) scales each row's loss and gradient;
    ``reduce`` is 'mean' (by total weight) or 'sum'.
    """
    ld = logits.data if _reshape is None else logits.data.reshape(_reshape)
    if ld.ndim != 2:
        raise ShapeError(f"softmax_nll_batch: expected [B, V] logits, got {logits.data.shape}")
    B, V = ld.shape
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (B,):
        raise ShapeError(f"softmax_nll_batch: targets shape {targets.shape} != ({B},)")
    if np.any(targets < 0) or np.any(targets >= V):
        raise IndexError("target id out of range")
    wt = np.ones(B, dtype=ld.dtype) if weights is None else np.asarray(weights, dtype=ld.dtype)
    m = ld.max(axis=-1, keepdims=True)
    ex = np.exp(ld - m)
    zs = ex.sum(axis=-1, keepdims=True)
    p = ex / zs
    nll = np.log(zs[:, 0]) + m[:, 0] - ld[np.arange(B), targets]
    total = float(wt.sum())
    denom = total if (reduce == "mean" and total > 0) else 1.0
    out = Tensor(np.asarray((nll * wt).sum() / denom, dtype=ld.dtype))

    def backward(g):
        dl = p.copy()
        dl[np.arange(B), targets] -= 1.0
        dl *= (g * wt / denom)[:, None]
        return (dl.reshape(logits.data.shape),)

    Tape.record((out,), (logits,), backward)
    return out


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter name."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, lr_scales: dict[str, float] | None = None) -> None:
    """One bias-corrected Adam update in place; parameters without gradients are skipped.

    ``lr_scales`` maps parameter-name prefixes to learning-rate factors, e.g.
    ``{"enc.": 0.1}`` slows a deep unnormalized stack that cannot take the
    step size the rest of the network wants.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        rate = lr
        if lr_scales:
            for prefix, factor in lr_scales.items():
                if name.startswith(prefix):
                    rate = lr * factor
                    break
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (rate / c1) * m / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# verification


def grad_check(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(*inputs)`` builds its outputs (a Tensor or a tuple of Tensors) from
    ops in this module. Non-scalar outputs are contracted against a fixed
    random cotangent S, i.e. the check verifies d(sum(S*f))/d(input) entry by
    entry. Inputs must be float64; every entry of every input is perturbed.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")

    def run(*args):
        outs = fn(*args)
        return (outs,) if isinstance(outs, Tensor) else tuple(outs)

    with Tape() as tape:
        outs = run(*inputs)
        srng = np.random.default_rng(1234)
        seeds = [np.ones_like(o.data) if o.data.size == 1 else srng.standard_normal(o.data.shape)
                 for o in outs]
        for t in inputs:
            t.grad = None
        for o, s in zip(outs, seeds):
            o.grad = np.array(s, dtype=o.data.dtype)
        tape._sweep()

    def value(*args):
        return sum(float((s * o.data).sum()) for o, s in zip(run(*args), seeds))

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        aflat = analytic.reshape(-1)
        if not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)  # view: in-place perturbations reach fn
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f1 = value(*inputs)
            flat[i] = orig - h
            f0 = value(*inputs)
            flat[i] = orig
            numeric = (f1 - f0) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst
