"""Differentiable ops on rank-4 tensors.

Each op validates shapes, computes the forward value, and records a
pull-back closure on the active tape (see tensor.record).  Convolutions
carry two forward routes: a plain loop reference and a vectorised fast
path, so the fast path can be checked against the reference at runtime.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, record

CONV_PATHS = ("im2col", "naive")
DW_PATHS = ("taps", "naive")


def _same_dtype(*tensors: Tensor) -> None:
    tags = {t.dtype for t in tensors}
    if len(tags) > 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(tags)}")


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows into (N, C*kh*kw, ho*wo)."""
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(gcols: np.ndarray, xp_shape: tuple, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add the transpose of _im2col."""
    n, c, _, _ = xp_shape
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    gc = gcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gc[:, :, i, j]
    return gxp


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    path: str = "im2col",
) -> Tensor:
    """2d cross-correlation.  Output H' = floor((H + 2p - kh) / stride) + 1.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (1, Cout, 1, 1) or None.
    path selects the forward route; the backward pass is shared.
    """
    if path not in CONV_PATHS:
        raise ConfigError(f"unknown conv2d path {path!r}, expected one of {CONV_PATHS}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"weight expects {cin_w} input channels, tensor has {cin}")
    if b is not None and b.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias must be (1, {cout}, 1, 1), got {b.shape}")
    _same_dtype(x, w, *([b] if b is not None else []))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    if kh > h + 2 * padding or kw > wdt + 2 * padding or ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{wdt} with padding {padding}")

    xp = _pad2d(x.value, padding)
    wf = w.value.reshape(cout, cin * kh * kw)
    if path == "im2col":
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        y = np.matmul(wf, cols).reshape(n, cout, ho, wo)
    else:
        y = np.empty((n, cout, ho, wo), dtype=x.value.dtype)
        wv = w.value
        for ni in range(n):
            for oi in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                        y[ni, oi, i, j] = np.sum(patch * wv[oi])
    if b is not None:
        y = y + b.value
    out = Tensor(y)

    def pull(g: np.ndarray) -> None:
        gf = g.reshape(n, cout, ho * wo)
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        k = cin * kh * kw
        gw = gf.transpose(1, 0, 2).reshape(cout, -1) @ cols.transpose(0, 2, 1).reshape(-1, k)
        w.grad += gw.reshape(w.shape)
        gcols = np.matmul(wf.T, gf)
        gxp = _col2im(gcols, xp.shape, kh, kw, stride, ho, wo)
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + wdt]
        x.grad += gxp
        if b is not None:
            b.grad += g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)

    record("conv2d", out, pull)
    return out


def depthwise_conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    dilation: int = 1,
    path: str = "taps",
) -> Tensor:
    """Per-channel k x k convolution at stride 1, padded to keep H, W.

    w: (C, 1, k, k) with k odd; padding is dilation * (k - 1) / 2, which
    only lands on integers for odd k, so even k is rejected outright.
    """
    if path not in DW_PATHS:
        raise ConfigError(f"unknown depthwise path {path!r}, expected one of {DW_PATHS}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    n, c, h, wdt = x.shape
    cw, one, kh, kw = w.shape
    if cw != c or one != 1:
        raise ShapeError(f"depthwise weight must be ({c}, 1, k, k), got {w.shape}")
    if kh != kw:
        raise ShapeError(f"depthwise kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ConfigError(f"depthwise kernel size must be odd to preserve shape, got {kh}")
    if b is not None and b.shape != (1, c, 1, 1):
        raise ShapeError(f"bias must be (1, {c}, 1, 1), got {b.shape}")
    _same_dtype(x, w, *([b] if b is not None else []))
    k, d = kh, dilation
    p = d * (k - 1) // 2

    xp = _pad2d(x.value, p)
    wv = w.value
    if path == "taps":
        y = np.zeros_like(x.value)
        for i in range(k):
            for j in range(k):
                y += wv[:, 0, i, j][None, :, None, None] * xp[:, :, i * d : i * d + h, j * d : j * d + wdt]
    else:
        y = np.empty_like(x.value)
        for ni in range(n):
            for ci in range(c):
                for hi in range(h):
                    for wi in range(wdt):
                        acc = 0.0
                        for i in range(k):
                            for j in range(k):
                                acc += wv[ci, 0, i, j] * xp[ni, ci, hi + i * d, wi + j * d]
                        y[ni, ci, hi, wi] = acc
    if b is not None:
        y = y + b.value
    out = Tensor(y)

    def pull(g: np.ndarray) -> None:
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i * d : i * d + h, j * d : j * d + wdt]
                w.grad[:, 0, i, j] += (g * sl).sum(axis=(0, 2, 3))
                gxp[:, :, i * d : i * d + h, j * d : j * d + wdt] += wv[:, 0, i, j][None, :, None, None] * g
        x.grad += gxp[:, :, p : p + h, p : p + wdt] if p else gxp
        if b is not None:
            b.grad += g.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)

    record("depthwise_conv2d", out, pull)
    return out


def pool_windows(n_in: int, n_out: int) -> list[tuple[int, int]]:
    """Adaptive pooling bins: bin a covers [floor(a*n/m), ceil((a+1)*n/m))."""
    if n_out < 1 or n_out > n_in:
        raise ShapeError(f"pool output size must be in [1, {n_in}], got {n_out}")
    return [(a * n_in // n_out, ((a + 1) * n_in + n_out - 1) // n_out) for a in range(n_out)]


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Mean over floor/ceil bins; exact block mean when sizes divide."""
    n, c, h, wdt = x.shape
    oh, ow = out_hw
    hbins = pool_windows(h, oh)
    wbins = pool_windows(wdt, ow)

    if h % oh == 0 and wdt % ow == 0:
        bh, bw = h // oh, wdt // ow
        y = x.value.reshape(n, c, oh, bh, ow, bw).mean(axis=(3, 5))
        out = Tensor(y)

        def pull(g: np.ndarray) -> None:
            gx = np.broadcast_to(
                (g / (bh * bw))[:, :, :, None, :, None], (n, c, oh, bh, ow, bw)
            ).reshape(n, c, h, wdt)
            x.grad += gx

        record("adaptive_avg_pool2d", out, pull)
        return out

    y = np.empty((n, c, oh, ow), dtype=x.value.dtype)
    for a, (hs, he) in enumerate(hbins):
        for bb, (ws, we) in enumerate(wbins):
            y[:, :, a, bb] = x.value[:, :, hs:he, ws:we].mean(axis=(2, 3))
    out = Tensor(y)

    def pull(g: np.ndarray) -> None:
        # bins can overlap when sizes do not divide, so accumulate
        for a, (hs, he) in enumerate(hbins):
            for bb, (ws, we) in enumerate(wbins):
                size = (he - hs) * (we - ws)
                x.grad[:, :, hs:he, ws:we] += (g[:, :, a, bb] / size)[:, :, None, None]

    record("adaptive_avg_pool2d", out, pull)
    return out


def adaptive_max_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Max over the same bins as adaptive_avg_pool2d.

    Gradient flows to the first maximum in row-major window order.
    """
    n, c, h, wdt = x.shape
    oh, ow = out_hw
    hbins = pool_windows(h, oh)
    wbins = pool_windows(wdt, ow)

    y = np.empty((n, c, oh, ow), dtype=x.value.dtype)
    argflat = np.empty((n, c, oh, ow), dtype=np.int64)
    for a, (hs, he) in enumerate(hbins):
        for bb, (ws, we) in enumerate(wbins):
            win = x.value[:, :, hs:he, ws:we].reshape(n, c, -1)
            idx = win.argmax(axis=2)
            y[:, :, a, bb] = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]
            argflat[:, :, a, bb] = idx
    out = Tensor(y)

    def pull(g: np.ndarray) -> None:
        for a, (hs, he) in enumerate(hbins):
            for bb, (ws, we) in enumerate(wbins):
                wh, ww = he - hs, we - ws
                sub = np.zeros((n, c, wh * ww), dtype=g.dtype)
                np.put_along_axis(sub, argflat[:, :, a, bb][:, :, None], g[:, :, a, bb][:, :, None], axis=2)
                x.grad[:, :, hs:he, ws:we] += sub.reshape(n, c, wh, ww)

    record("adaptive_max_pool2d", out, pull)
    return out


def global_avg_pool2d(x: Tensor) -> Tensor:
    return adaptive_avg_pool2d(x, (1, 1))


def global_max_pool2d(x: Tensor) -> Tensor:
    return adaptive_max_pool2d(x, (1, 1))


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Linear layer on (N, C, 1, 1) vectors; w is (Cout, Cin, 1, 1)."""
    n, cin, h, wdt = x.shape
    if (h, wdt) != (1, 1):
        raise ShapeError(f"fully_connected input must be (N, C, 1, 1), got {x.shape}")
    cout, cin_w, kh, kw = w.shape
    if (kh, kw) != (1, 1) or cin_w != cin:
        raise ShapeError(f"fully_connected weight must be ({cout}, {cin}, 1, 1), got {w.shape}")
    if b is not None and b.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias must be (1, {cout}, 1, 1), got {b.shape}")
    _same_dtype(x, w, *([b] if b is not None else []))

    x2 = x.value.reshape(n, cin)
    wf = w.value.reshape(cout, cin)
    y = x2 @ wf.T
    if b is not None:
        y = y + b.value.reshape(1, cout)
    out = Tensor(y.reshape(n, cout, 1, 1))

    def pull(g: np.ndarray) -> None:
        g2 = g.reshape(n, cout)
        x.grad += (g2 @ wf).reshape(x.shape)
        w.grad += (g2.T @ x2).reshape(w.shape)
        if b is not None:
            b.grad += g2.sum(axis=0).reshape(1, cout, 1, 1)

    record("fully_connected", out, pull)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.value, 0.0))

    def pull(g: np.ndarray) -> None:
        x.grad += g * (x.value > 0)

    record("relu", out, pull)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic, clipped into the open interval (0, 1)."""
    z = x.value
    s = np.empty_like(z)
    pos = z >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    s[~pos] = ez / (1.0 + ez)
    fi = np.finfo(z.dtype)
    s = np.clip(s, fi.tiny, 1.0 - fi.eps)
    out = Tensor(s)

    def pull(g: np.ndarray) -> None:
        x.grad += g * s * (1.0 - s)

    record("sigmoid", out, pull)
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, wdt = x.shape
    out = Tensor(x.value.repeat(2, axis=2).repeat(2, axis=3))

    def pull(g: np.ndarray) -> None:
        x.grad += g.reshape(n, c, h, 2, wdt, 2).sum(axis=(3, 5))

    record("upsample_nearest2x", out, pull)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    _same_dtype(a, b)
    out = Tensor(a.value + b.value)

    def pull(g: np.ndarray) -> None:
        a.grad += g
        b.grad += g

    record("add", out, pull)
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    _same_dtype(a, b)
    out = Tensor(a.value * b.value)

    def pull(g: np.ndarray) -> None:
        a.grad += g * b.value
        b.grad += g * a.value

    record("hadamard", out, pull)
    return out


def weight_map(x: Tensor, w: Tensor) -> Tensor:
    """Elementwise scale by a (1, C, H, W) map shared across the batch."""
    n, c, h, wdt = x.shape
    if w.shape != (1, c, h, wdt):
        raise ShapeError(f"weight map must be (1, {c}, {h}, {wdt}), got {w.shape}")
    _same_dtype(x, w)
    out = Tensor(x.value * w.value)

    def pull(g: np.ndarray) -> None:
        x.grad += g * w.value
        w.grad += (g * x.value).sum(axis=0, keepdims=True)

    record("weight_map", out, pull)
    return out


def broadcast_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each (n, c) plane of x by the scalar s[n, c, 0, 0]."""
    n, c, _, _ = x.shape
    if s.shape != (n, c, 1, 1):
        raise ShapeError(f"scale tensor must be ({n}, {c}, 1, 1), got {s.shape}")
    _same_dtype(x, s)
    out = Tensor(x.value * s.value)

    def pull(g: np.ndarray) -> None:
        x.grad += g * s.value
        s.grad += (g * x.value).sum(axis=(2, 3), keepdims=True)

    record("broadcast_scale", out, pull)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels needs matching N, H, W, got {a.shape} and {b.shape}")
    _same_dtype(a, b)
    out = Tensor(np.concatenate([a.value, b.value], axis=1))

    def pull(g: np.ndarray) -> None:
        a.grad += g[:, :ca]
        b.grad += g[:, ca:]

    record("concat_channels", out, pull)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.value * c)

    def pull(g: np.ndarray) -> None:
        x.grad += g * c

    record("scale", out, pull)
    return out


def mean_all(x: Tensor) -> Tensor:
    """Mean over every element, as a (1, 1, 1, 1) scalar."""
    out = Tensor(np.full((1, 1, 1, 1), x.value.mean(), dtype=x.value.dtype))

    def pull(g: np.ndarray) -> None:
        x.grad += g / x.value.size

    record("mean_all", out, pull)
    return out


def bce_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; pred must lie strictly inside (0, 1)."""
    target = np.asarray(target)
    if target.shape != pred.shape:
        raise ShapeError(f"target shape {target.shape} does not match prediction {pred.shape}")
    p = pred.value
    t = target.astype(p.dtype)
    per = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out = Tensor(np.full((1, 1, 1, 1), per.mean(), dtype=p.dtype))

    def pull(g: np.ndarray) -> None:
        pred.grad += (g / p.size) * (p - t) / (p * (1.0 - p))

    record("bce_loss", out, pull)
    return out
