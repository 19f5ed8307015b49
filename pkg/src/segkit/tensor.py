"""Minimal dense tensor with reverse-mode automatic differentiation.

Numpy holds the flat storage (row-major, NCHW for image data); the graph is
recorded dynamically as ops execute and traversed once, in reverse topological
order, on backward(). f32 is the training element type; gradient-check paths
use f64 because central differences are unreliable in single precision.
"""

import numpy as np

from .errors import (
    AxisOutOfRangeError,
    ClassOutOfRangeError,
    EmptyShapeError,
    NegativeOutputExtentError,
    NonScalarLossError,
    ShapeMismatchError,
)

__all__ = [
    "Tensor",
    "tensor_new",
    "elementwise",
    "matmul",
    "conv2d",
    "softmax",
    "cross_entropy",
    "concat",
    "upsample_nearest",
    "layer_norm",
    "add_bias",
    "finite_diff_grad",
    "grad_check",
    "rel_error",
]


class Tensor:
    """Dense n-d array with an optional gradient slot.

    Data is immutable by convention after creation; only ``grad`` mutates.
    Gradients accumulate across backward() calls until ``zero_grad``.
    """

    def __init__(self, data, requires_grad=False, dtype=None, parents=(), backward_fn=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 0 and 0 in arr.shape:
            raise EmptyShapeError(f"zero extent in shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- autograd -----------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise NonScalarLossError(f"backward needs a scalar loss, got shape {self.data.shape}")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        # flow gradients through a local table so repeated backward calls
        # (with leaf zeroing in between) stay deterministic
        flow = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flow.get(id(parent))
                flow[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        sub = self.data[key]

        def bwd(g):
            gx = np.zeros_like(self.data)
            gx[key] = g
            return (gx,)

        return Tensor(np.ascontiguousarray(sub), parents=(self,), backward_fn=bwd)

    @property
    def T(self):
        return transpose2d(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def tensor_new(shape, data):
    """Construct a tensor from an extent list and flat row-major data."""
    shape = tuple(int(s) for s in shape)
    if any(s == 0 for s in shape):
        raise EmptyShapeError(f"zero extent in {shape}")
    flat = np.asarray(data, dtype=np.float64).reshape(-1)
    n = 1
    for s in shape:
        n *= s
    if flat.size != n:
        raise ShapeMismatchError(f"shape {shape} needs {n} values, got {flat.size}")
    return Tensor(flat.reshape(shape).astype(np.float32))


# -- elementwise ------------------------------------------------------------


def _as_pair(a, b):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeMismatchError(f"{a.shape} vs {b.shape}")
        return b, None
    return None, float(b)


def add(a, b):
    bt, bs = _as_pair(a, b)
    if bt is None:
        return Tensor(a.data + bs, parents=(a,), backward_fn=lambda g: (g,))
    return Tensor(a.data + bt.data, parents=(a, bt), backward_fn=lambda g: (g, g))


def mul(a, b):
    bt, bs = _as_pair(a, b)
    if bt is None:
        return Tensor(a.data * bs, parents=(a,), backward_fn=lambda g: (g * bs,))
    return Tensor(a.data * bt.data, parents=(a, bt),
                  backward_fn=lambda g: (g * bt.data, g * a.data))


def scale(a, s):
    s = float(s)
    return Tensor(a.data * s, parents=(a,), backward_fn=lambda g: (g * s,))


def relu(a):
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0), parents=(a,),
                  backward_fn=lambda g: (g * mask,))


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(y, parents=(a,), backward_fn=lambda g: (g * y * (1.0 - y),))


def scalar_mul(x, s):
    """Multiply tensor x by a learned scalar tensor s (shape ())."""
    if s.data.size != 1:
        raise ShapeMismatchError(f"scalar_mul needs a scalar tensor, got {s.data.shape}")
    sv = float(s.data)

    def bwd(g):
        return g * sv, np.array((g * x.data).sum(), dtype=s.dtype)

    return Tensor(x.data * sv, parents=(x, s), backward_fn=bwd)


def elementwise(op, a, b=None):
    """Dispatch by name: add, mul, relu, scale."""
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "relu":
        return relu(a)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- shape ops --------------------------------------------------------------


def reshape(a, shape):
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return Tensor(out, parents=(a,),
                  backward_fn=lambda g: (g.reshape(a.data.shape),))


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose2d needs rank 2, got {a.data.ndim}")
    return Tensor(np.ascontiguousarray(a.data.T), parents=(a,),
                  backward_fn=lambda g: (np.ascontiguousarray(g.T),))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor(out, parents=tuple(tensors), backward_fn=bwd)


def tsum(a):
    return Tensor(np.array(a.data.sum(), dtype=a.dtype), parents=(a,),
                  backward_fn=lambda g: (np.full_like(a.data, float(g)),))


def tmean(a):
    n = a.data.size
    return Tensor(np.array(a.data.mean(), dtype=a.dtype), parents=(a,),
                  backward_fn=lambda g: (np.full_like(a.data, float(g) / n),))


# -- linear algebra ---------------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(f"matmul {a.data.shape} x {b.data.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, parents=(a, b), backward_fn=bwd)


def add_bias(a, bias):
    """a[..., c] + bias[c], broadcast over leading axes."""
    if bias.data.ndim != 1 or a.data.shape[-1] != bias.data.shape[0]:
        raise ShapeMismatchError(f"bias {bias.data.shape} vs {a.data.shape}")

    def bwd(g):
        return g, g.reshape(-1, bias.data.shape[0]).sum(axis=0)

    return Tensor(a.data + bias.data, parents=(a, bias), backward_fn=bwd)


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


# -- convolution ------------------------------------------------------------


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride]
    return cols


def conv2d(x, w, stride=1, padding=0):
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError("conv2d expects NCHW input and OIHW kernel")
    n, cin, h, wd = x.data.shape
    cout, cin2, kh, kw = w.data.shape
    if cin != cin2:
        raise ShapeMismatchError(f"channels {cin} vs kernel {cin2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatchError("kernel extents must be odd")
    if stride < 1:
        raise ShapeMismatchError("stride must be >= 1")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise NegativeOutputExtentError(f"output {ho}x{wo} for input {h}x{wd}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = np.einsum("ncijhw,ocij->nohw", cols, w.data, optimize=True)

    def bwd(g):
        gw = np.einsum("ncijhw,nohw->ocij", cols, g, optimize=True)
        gxp = np.zeros_like(xp)
        gcols = np.einsum("ocij,nohw->ncijhw", w.data, g, optimize=True)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += gcols[:, :, i, j]
        gx = gxp if padding == 0 else gxp[:, :, padding:padding + h, padding:padding + wd]
        return np.ascontiguousarray(gx), gw

    return Tensor(y, parents=(x, w), backward_fn=bwd)


def upsample_nearest(x, factor):
    """Nearest-neighbor upsampling of an NCHW tensor by an integer factor."""
    n, c, h, w = x.data.shape
    f = int(factor)
    y = x.data.repeat(f, axis=2).repeat(f, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor(y, parents=(x,), backward_fn=bwd)


# -- normalization and losses ----------------------------------------------


def softmax(x, axis):
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise AxisOutOfRangeError(f"axis {axis} for rank {nd}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return Tensor(y, parents=(x,), backward_fn=bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeMismatchError("layer_norm scale/shift must match last extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bwd(g):
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return Tensor(y, parents=(x, gamma, beta), backward_fn=bwd)


def cross_entropy(logits, target, ignore_index=-1, pixel_weights=None):
    """Mean negative log-likelihood over non-ignored pixels.

    logits: [N,K,H,W]; target: integer array [N,H,W].  Optional pixel_weights
    [N,H,W] multiply each pixel's loss (the weighted mean normalizes by the
    weight total).  All pixels ignored -> loss 0 with zero gradient.
    """
    if logits.data.ndim != 4:
        raise ShapeMismatchError("cross_entropy expects [N,K,H,W] logits")
    n, k, h, w = logits.data.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ShapeMismatchError(f"target {target.shape} vs logits {logits.data.shape}")
    valid = target != ignore_index
    if np.any((target < 0) & valid) or np.any(target >= k):
        raise ClassOutOfRangeError(f"class ids must be in [0,{k}) or {ignore_index}")

    if pixel_weights is None:
        weights = valid.astype(logits.dtype)
    else:
        weights = np.asarray(pixel_weights, dtype=logits.dtype) * valid
    denom = float(weights.sum())
    if denom == 0.0:
        return Tensor(np.zeros((), dtype=logits.dtype), parents=(logits,),
                      backward_fn=lambda g: (np.zeros_like(logits.data),))

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    tsafe = np.where(valid, target, 0)
    ni, hi, wi = np.meshgrid(np.arange(n), np.arange(h), np.arange(w), indexing="ij")
    nll = -logp[ni, tsafe, hi, wi]
    loss = (nll * weights).sum() / denom

    def bwd(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        onehot[ni, tsafe, hi, wi] = 1.0
        gl = (p - onehot) * weights[:, None, :, :] * (float(g) / denom)
        return (gl.astype(logits.dtype),)

    return Tensor(np.array(loss, dtype=logits.dtype), parents=(logits,), backward_fn=bwd)


# -- gradient oracle --------------------------------------------------------


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a tensor-to-scalar function at x (f64)."""
    base = x.data.astype(np.float64)
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    bflat = base.reshape(-1)
    for i in range(bflat.size):
        orig = bflat[i]
        bflat[i] = orig + h
        fp = float(f(Tensor(base.copy())).data)
        bflat[i] = orig - h
        fm = float(f(Tensor(base.copy())).data)
        bflat[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return out


def rel_error(a, b, floor=1e-8):
    """Max elementwise relative error with denominator max(|a|,|b|,floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(f, x, h=1e-5):
    """Compare backward and finite-difference gradients of f at x.

    Returns the max relative error; x must be f64.
    """
    xt = Tensor(x.data.astype(np.float64), requires_grad=True)
    loss = f(xt)
    loss.backward()
    numeric = finite_diff_grad(f, xt, h=h)
    return rel_error(xt.grad, numeric)
