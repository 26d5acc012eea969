"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just enough machinery to differentiate the toy neural components and the
attack objectives with respect to an input image: elementwise arithmetic,
a few smooth nonlinearities, strided convolution and its transpose, reflect
padding, separable valid correlation (Gaussian blur), bilinear rotation,
pooling and small dense heads.

Every op is dual-mode: given plain ndarrays it computes the value with no
graph; given a ``Node`` anywhere in its inputs it records the local VJPs.
Gradients flow only into ``Node`` inputs, so fixed weights are passed as
plain arrays and cost nothing. All VJPs are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Node:
    """One value in the computation graph, with edges back to its parents."""

    __slots__ = ("value", "_edges")

    def __init__(self, value, edges=()):
        self.value = np.asarray(value, dtype=np.float64)
        self._edges = edges

    # arithmetic sugar so loss assembly reads naturally
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, edges={len(self._edges)})"


def leaf(value) -> Node:
    """Wrap an array as a graph leaf (the thing gradients are taken w.r.t.)."""
    return Node(value)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _is_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def _make(value, *pairs) -> Node:
    edges = tuple((p, fn) for p, fn in pairs if isinstance(p, Node))
    return Node(value, edges)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def grad(out: Node, wrt: Node) -> np.ndarray:
    """Gradient of a scalar-valued node with respect to one leaf."""
    if out.value.size != 1:
        raise ValueError(f"grad expects a scalar output, got shape {out.value.shape}")
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._edges:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node is wrt:
            return np.reshape(g, wrt.value.shape)
        for parent, vjp in node._edges:
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return np.zeros_like(wrt.value)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    va, vb = _val(a), _val(b)
    out = va + vb
    if not _is_node(a, b):
        return out
    return _make(
        out,
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(g, vb.shape)),
    )


def sub(a, b):
    va, vb = _val(a), _val(b)
    out = va - vb
    if not _is_node(a, b):
        return out
    return _make(
        out,
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(-g, vb.shape)),
    )


def mul(a, b):
    va, vb = _val(a), _val(b)
    out = va * vb
    if not _is_node(a, b):
        return out
    return _make(
        out,
        (a, lambda g: _unbroadcast(g * vb, va.shape)),
        (b, lambda g: _unbroadcast(g * va, vb.shape)),
    )


def div(a, b):
    va, vb = _val(a), _val(b)
    out = va / vb
    if not _is_node(a, b):
        return out
    return _make(
        out,
        (a, lambda g: _unbroadcast(g / vb, va.shape)),
        (b, lambda g: _unbroadcast(-g * va / (vb * vb), vb.shape)),
    )


def tanh(x):
    out = np.tanh(_val(x))
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: g * (1.0 - out * out)))


def sigmoid(x):
    v = _val(x)
    out = 0.5 * (np.tanh(0.5 * v) + 1.0)
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: g * out * (1.0 - out)))


def sqrt(x):
    out = np.sqrt(_val(x))
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: g * 0.5 / out))


# ---------------------------------------------------------------------------
# reductions and contractions


def vsum(x):
    v = _val(x)
    out = v.sum()
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: np.full_like(v, float(g))))


def mean(x):
    v = _val(x)
    out = v.mean()
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: np.full_like(v, float(g) / v.size)))


def sum_sq(x):
    """Sum of squared elements, the workhorse of the L2 losses."""
    v = _val(x)
    out = np.vdot(v, v)
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: (2.0 * float(g)) * v))


def vdot(a, b):
    va, vb = _val(a), _val(b)
    out = np.vdot(va, vb)
    if not _is_node(a, b):
        return out
    return _make(
        out,
        (a, lambda g: float(g) * vb),
        (b, lambda g: float(g) * va),
    )


def matvec(v, m: np.ndarray, b: np.ndarray | None = None):
    """Dense head: m @ v (+ b) with fixed weights."""
    vv = _val(v)
    out = m @ vv if b is None else m @ vv + b
    if not _is_node(v):
        return out
    return _make(out, (v, lambda g: m.T @ g))


def global_mean(x):
    """Spatial mean over (H, W) of an (H, W, C) tensor, returns (C,)."""
    v = _val(x)
    out = v.mean(axis=(0, 1))
    if not _is_node(x):
        return out
    h, w, _ = v.shape
    return _make(out, (x, lambda g: np.broadcast_to(g / (h * w), v.shape).copy()))


def cosine(a, b):
    """Cosine similarity of two flattened vectors; differentiable in both."""
    s = vdot(a, b)
    na = sqrt(vdot(a, a))
    nb = sqrt(vdot(b, b))
    return div(s, mul(na, nb))


# ---------------------------------------------------------------------------
# convolution family (channels-last layout, kernels (kh, kw, cin, cout))


def _conv2d_fwd(x, w, stride, pad):
    kh, kw, cin, cout = w.shape
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::stride, ::stride]
    return np.einsum("ijckl,klcd->ijd", win, w, optimize=True)


def _conv2d_adj_x(g, w, stride, pad, x_shape):
    kh, kw, cin, cout = w.shape
    h, wd = x_shape[0], x_shape[1]
    hp, wp = h + 2 * pad, wd + 2 * pad
    ho, wo = g.shape[0], g.shape[1]
    gx = np.zeros((hp, wp, cin))
    for a in range(kh):
        for b in range(kw):
            gx[a : a + ho * stride : stride, b : b + wo * stride : stride] += g @ w[a, b].T
    return gx[pad : hp - pad, pad : wp - pad] if pad else gx


def conv2d(x, w: np.ndarray, stride: int = 1, pad: int = 0):
    """2D cross-correlation with fixed kernel (kh, kw, cin, cout), zero padding."""
    vx = _val(x)
    out = _conv2d_fwd(vx, w, stride, pad)
    if not _is_node(x):
        return out
    shape = vx.shape
    return _make(out, (x, lambda g: _conv2d_adj_x(g, w, stride, pad, shape)))


def conv2d_transpose(x, w: np.ndarray, stride: int = 1, pad: int = 0, out_pad: int = 0):
    """Adjoint of ``conv2d``: upsamples (h, w, cout) back to the matching
    input grid of a strided conv with kernel (kh, kw, cin, cout)."""
    vx = _val(x)
    kh, kw, cin, cout = w.shape
    h_in, w_in = vx.shape[0], vx.shape[1]
    h_out = (h_in - 1) * stride + kh - 2 * pad + out_pad
    w_out = (w_in - 1) * stride + kw - 2 * pad + out_pad
    out = _conv2d_adj_x(vx, w, stride, pad, (h_out, w_out, cin))
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: _conv2d_fwd(g, w, stride, pad)[: h_in, : w_in]))


def pad_reflect(x, p: int):
    vx = _val(x)
    out = np.pad(vx, ((p, p), (p, p), (0, 0)), mode="reflect")
    if not _is_node(x):
        return out
    h, w, _ = vx.shape
    idx_h = np.pad(np.arange(h), p, mode="reflect")
    idx_w = np.pad(np.arange(w), p, mode="reflect")

    def vjp(g):
        gx = np.zeros_like(vx)
        np.add.at(gx, (idx_h[:, None], idx_w[None, :]), g)
        return gx

    return _make(out, (x, vjp))


def _slices(axis, start, stop):
    s = [slice(None)] * 3
    s[axis] = slice(start, stop)
    return tuple(s)


def corr1d_valid(x, k: np.ndarray, axis: int):
    """Valid-mode 1D correlation along a spatial axis, per channel."""
    vx = _val(x)
    n = vx.shape[axis]
    m = k.size
    out_len = n - m + 1
    out_shape = list(vx.shape)
    out_shape[axis] = out_len
    out = np.zeros(out_shape)
    for t in range(m):
        out += k[t] * vx[_slices(axis, t, t + out_len)]
    if not _is_node(x):
        return out

    def vjp(g):
        gx = np.zeros_like(vx)
        for t in range(m):
            gx[_slices(axis, t, t + out_len)] += k[t] * g
        return gx

    return _make(out, (x, vjp))


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    """Sampled, normalized Gaussian taps (matches the usual ndimage kernel)."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(x, size: int = 5, sigma: float = 1.5):
    """Depthwise Gaussian blur with reflect padding; differentiable."""
    k = gaussian_kernel1d(size, sigma)
    p = size // 2
    xp = pad_reflect(x, p)
    return corr1d_valid(corr1d_valid(xp, k, axis=0), k, axis=1)


# ---------------------------------------------------------------------------
# geometric resampling


def _reflect_coords(c: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(c)
    period = 2.0 * (n - 1)
    c = np.remainder(c, period)
    return np.where(c > (n - 1), period - c, c)


def _bilinear_gather_maps(sy: np.ndarray, sx: np.ndarray, h: int, w: int):
    sy = _reflect_coords(sy, h)
    sx = _reflect_coords(sx, w)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.minimum(y0, h - 1)
    x0 = np.minimum(x0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    corners = (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x1, (1 - fy) * fx),
        (y1, x0, fy * (1 - fx)),
        (y1, x1, fy * fx),
    )
    return corners


def sample_bilinear(x, sy: np.ndarray, sx: np.ndarray):
    """Resample an (H, W, C) tensor at continuous source coords (reflect fill).

    ``sy``/``sx`` give, for every output pixel, the source row/column to read.
    Differentiable in the image, not in the coordinates.
    """
    vx = _val(x)
    h, w, _ = vx.shape
    corners = _bilinear_gather_maps(sy, sx, h, w)
    out = np.zeros(sy.shape + (vx.shape[2],))
    for iy, ix, wt in corners:
        out += wt[..., None] * vx[iy, ix]
    if not _is_node(x):
        return out

    def vjp(g):
        gx = np.zeros_like(vx)
        for iy, ix, wt in corners:
            np.add.at(gx, (iy, ix), wt[..., None] * g)
        return gx

    return _make(out, (x, vjp))


def rotation_coords(h: int, w: int, angle_deg: float):
    """Source-coordinate maps realizing a rotation about the image center."""
    th = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(th), np.sin(th)
    sy = c * dy + s * dx + cy
    sx = -s * dy + c * dx + cx
    return sy, sx


def rotate_bilinear(x, angle_deg: float):
    """Rotate about the center on a same-size canvas, bilinear, reflect fill."""
    vx = _val(x)
    sy, sx = rotation_coords(vx.shape[0], vx.shape[1], angle_deg)
    return sample_bilinear(x, sy, sx)


def bilinear_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize of an (h, w, C) array (forward-only helper)."""
    h, w = field.shape[0], field.shape[1]
    sy = np.linspace(0.0, h - 1.0, out_h)
    sx = np.linspace(0.0, w - 1.0, out_w)
    gy, gx = np.meshgrid(sy, sx, indexing="ij")
    return sample_bilinear(field, gy, gx)


# ---------------------------------------------------------------------------
# bridge for externally differentiated components (real backends)


def external(x, fn, name: str = "external"):
    """Splice an externally computed function into the graph.

    ``fn(value) -> (out_value, vjp)`` where ``vjp(g) -> grad_wrt_value``;
    the external side (e.g. a torch model) owns both directions.
    """
    vx = _val(x)
    out, vjp = fn(vx)
    out = np.asarray(out, dtype=np.float64)
    if not _is_node(x):
        return out
    return _make(out, (x, lambda g: np.asarray(vjp(g), dtype=np.float64)))
