"""Color Shift Estimation-and-Correction.

Pipeline: an offset-prediction head estimates darkening/brightening offset
maps from the input image via offset-modulated (deformable-sampling)
convolutions; three conv stacks extract token features from the image and
the two offset maps; the features are fused through self-correlation
matrices put through a symmetrize-and-normalize map with learned fusion
weights; a small upsampling decoder reconstructs the corrected image.

Identity-at-init: the offset head's output layer and the decoder's output
layer are zero-initialized and the decoder carries a residual connection
from the input image, so the untrained module is a near-no-op.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    InputRangeError,
    NonFiniteOffsetError,
    NonSquareError,
    ShapeMismatchError,
)
from .optim import Adam
from .rng import SplitMix64
from .tensor import (
    Tensor,
    add,
    add_bias,
    conv2d,
    matmul,
    mul,
    relu,
    reshape,
    scalar_mul,
    scale,
    sigmoid,
    tmean,
    transpose2d,
    upsample_nearest,
)

__all__ = [
    "OffsetField",
    "FusionWeights",
    "CsecConfig",
    "offset_conv",
    "cose_forward",
    "self_correlation",
    "sym_norm",
    "como_fuse",
    "decode",
    "csec_correct",
    "init_csec",
    "train_csec",
    "psnr",
]


@dataclass
class OffsetField:
    delta_d: Tensor  # darkening offset map, same shape as the image
    delta_b: Tensor  # brightening offset map
    tap_offsets: Tensor  # per-tap fractional displacements, [taps, 2]


@dataclass
class FusionWeights:
    gamma_x: Tensor  # scalar
    gamma_d: Tensor
    gamma_b: Tensor
    bias: Tensor  # [c], broadcast over tokens


@dataclass
class CsecConfig:
    feat_channels: int = 8
    hidden: int = 16
    kernel: int = 3
    residual_eps: float = 1e-4  # input clip for the logit-space residual


# -- deformable sampling ----------------------------------------------------


def _int_shift(x, dy, dx):
    """out[..., y, x] = x[..., y+dy, x+dx], zero-filled outside bounds."""
    h, w = x.shape[-2], x.shape[-1]
    out = np.zeros_like(x)
    y0, y1 = max(-dy, 0), min(h, h - dy)
    x0, x1 = max(-dx, 0), min(w, w - dx)
    if y0 < y1 and x0 < x1:
        out[..., y0:y1, x0:x1] = x[..., y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    return out


def _bilinear_shift(x, sy, sx):
    """Fractional translation via bilinear interpolation, zero outside."""
    fy, fx = int(np.floor(sy)), int(np.floor(sx))
    ay, ax = sy - fy, sx - fx
    out = np.zeros_like(x)
    for dy, wy in ((fy, 1.0 - ay), (fy + 1, ay)):
        if wy == 0.0:
            continue
        for dx, wx in ((fx, 1.0 - ax), (fx + 1, ax)):
            if wx == 0.0:
                continue
            out += (wy * wx) * _int_shift(x, dy, dx)
    return out


def _shift_partials(x, sy, sx):
    """(d/dsy, d/dsx) of _bilinear_shift at (sy, sx)."""
    fy, fx = int(np.floor(sy)), int(np.floor(sx))
    ay, ax = sy - fy, sx - fx
    s00 = _int_shift(x, fy, fx)
    s01 = _int_shift(x, fy, fx + 1)
    s10 = _int_shift(x, fy + 1, fx)
    s11 = _int_shift(x, fy + 1, fx + 1)
    dsy = (1.0 - ax) * (s10 - s00) + ax * (s11 - s01)
    dsx = (1.0 - ay) * (s01 - s00) + ay * (s11 - s10)
    return dsy, dsx


def offset_conv(x: Tensor, w: Tensor, tap_offsets: Tensor) -> Tensor:
    """Offset-modulated convolution y(p) = sum_i w_i * x(p + p_i + dp_i).

    Stride 1, same-size output (zero padding implied by out-of-bounds
    sampling).  Each kernel tap i samples at its integer grid position p_i
    displaced by a learned fractional offset dp_i, via bilinear
    interpolation.  Offsets are clamped to the kernel extent per axis.
    Differentiable in x, w and tap_offsets.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError("offset_conv expects NCHW input and OIHW kernel")
    n, cin, h, wd = x.data.shape
    cout, cin2, kh, kw = w.data.shape
    if cin != cin2:
        raise ShapeMismatchError(f"channels {cin} vs kernel {cin2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatchError("kernel extents must be odd")
    if tap_offsets.data.shape != (kh * kw, 2):
        raise ShapeMismatchError(f"tap_offsets must be [{kh * kw},2], got {tap_offsets.data.shape}")
    if not np.all(np.isfinite(tap_offsets.data)):
        raise NonFiniteOffsetError("tap offsets contain non-finite values")

    ry, rx = (kh - 1) // 2, (kw - 1) // 2
    raw = tap_offsets.data.astype(np.float64)
    clamped = np.stack([np.clip(raw[:, 0], -kh, kh), np.clip(raw[:, 1], -kw, kw)], axis=1)
    active = clamped == raw  # clamp passes no gradient where it binds

    shifted = []
    shifts = []
    y = np.zeros((n, cout, h, wd), dtype=x.dtype)
    for t in range(kh * kw):
        iy, ix = t // kw, t % kw
        sy = (iy - ry) + clamped[t, 0]
        sx = (ix - rx) + clamped[t, 1]
        plane = _bilinear_shift(x.data, sy, sx)
        shifted.append(plane)
        shifts.append((sy, sx))
        y += np.einsum("nchw,oc->nohw", plane, w.data[:, :, iy, ix], optimize=True)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        gt = np.zeros_like(tap_offsets.data)
        for t in range(kh * kw):
            iy, ix = t // kw, t % kw
            wt = w.data[:, :, iy, ix]
            gw[:, :, iy, ix] = np.einsum("nchw,nohw->oc", shifted[t], g, optimize=True)
            gplane = np.einsum("nohw,oc->nchw", g, wt, optimize=True)
            gx += _bilinear_shift(gplane, -shifts[t][0], -shifts[t][1])
            if tap_offsets.requires_grad:
                dsy, dsx = _shift_partials(x.data, *shifts[t])
                if active[t, 0]:
                    gt[t, 0] = float((gplane * dsy).sum())
                if active[t, 1]:
                    gt[t, 1] = float((gplane * dsx).sum())
        return gx, gw, gt

    return Tensor(y, parents=(x, w, tap_offsets), backward_fn=bwd)


# -- COSE: offset estimation ------------------------------------------------


def _check_image_range(image: Tensor):
    lo, hi = float(image.data.min()), float(image.data.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise InputRangeError(f"pixel values [{lo:.4g}, {hi:.4g}] outside [0,1]")


def cose_forward(image: Tensor, params: dict) -> OffsetField:
    """Predict darkening/brightening offset maps from the image."""
    _check_image_range(image)
    h1 = relu(offset_conv(image, params["cose.w1"], params["cose.t1"]))
    out = offset_conv(h1, params["cose.w2"], params["cose.t2"])
    c = image.data.shape[1]
    delta_d = out[:, :c]
    delta_b = out[:, c:]
    return OffsetField(delta_d=delta_d, delta_b=delta_b, tap_offsets=params["cose.t2"])


# -- COMO: correlation-normalized fusion ------------------------------------


def self_correlation(f: Tensor) -> Tensor:
    """A = F F^T over row-per-token features; symmetric PSD by construction."""
    return matmul(f, transpose2d(f))


def _rsqrt_clamp(d: Tensor, eps: float) -> Tensor:
    """1/sqrt(max(d, eps)) elementwise; zero gradient where the clamp binds."""
    clamped = np.maximum(d.data, eps)
    y = 1.0 / np.sqrt(clamped)
    open_mask = d.data > eps

    def bwd(g):
        return (np.where(open_mask, -0.5 * g * y / clamped, 0.0),)

    return Tensor(y, parents=(d,), backward_fn=bwd)


def sym_norm(a: Tensor, eps: float = 1e-8, symmetrize: str = "as_printed",
             degree: str = "diag") -> Tensor:
    """D^{-1/2} S D^{-1/2} with S the symmetrized matrix and D its degree.

    symmetrize="as_printed" uses S = (2A + A^T)/2 (so symmetric A scales by
    1.5); "conventional" uses (A + A^T)/2.  degree="diag" takes D from the
    diagonal of S (unit output diagonal whenever diag(S) > eps);
    "rowsum" takes row sums.  Diagonal entries are clamped below by eps.
    """
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise NonSquareError(f"sym_norm needs a square matrix, got {a.data.shape}")
    t = a.data.shape[0]
    if symmetrize == "as_printed":
        s = add(a, scale(transpose2d(a), 0.5))  # A + A^T/2 == (2A + A^T)/2
    elif symmetrize == "conventional":
        s = scale(add(a, transpose2d(a)), 0.5)
    else:
        raise ValueError(f"unknown symmetrize {symmetrize!r}")
    if degree == "diag":
        d = s[np.arange(t), np.arange(t)]
    elif degree == "rowsum":
        ones = Tensor(np.ones((t, 1), dtype=a.dtype))
        d = reshape(matmul(s, ones), (t,))
    else:
        raise ValueError(f"unknown degree {degree!r}")
    dm = _rsqrt_clamp(d, eps)
    outer = matmul(reshape(dm, (t, 1)), reshape(dm, (1, t)))
    return mul(s, outer)


def como_fuse(f_x: Tensor, f_d: Tensor, f_b: Tensor, weights: FusionWeights,
              eps: float = 1e-8, symmetrize: str = "as_printed",
              degree: str = "diag") -> Tensor:
    """Learned-weight fusion of correlation-normalized feature branches."""
    if not (f_x.data.shape == f_d.data.shape == f_b.data.shape):
        raise ShapeMismatchError("feature branches must share shape")
    acc = None
    for f, gamma in ((f_x, weights.gamma_x), (f_d, weights.gamma_d), (f_b, weights.gamma_b)):
        norm = sym_norm(self_correlation(f), eps=eps, symmetrize=symmetrize, degree=degree)
        term = scalar_mul(matmul(norm, f), gamma)
        acc = term if acc is None else add(acc, term)
    return add_bias(acc, weights.bias)


# -- decoder ----------------------------------------------------------------


def decode(params: dict, f_corr: Tensor, target_shape, image=None,
           residual_eps: float = 1e-4) -> Tensor:
    """Reconstruct a [N,3,H,W] image in [0,1] from fused token features.

    With ``image`` given, the decoder output is a residual added in logit
    space, which makes a zero-initialized output layer an identity map.
    """
    h, w = target_shape
    th, tw = h // 4, w // 4
    t, c = f_corr.data.shape
    if t != th * tw:
        raise ShapeMismatchError(f"{t} tokens cannot fill a {th}x{tw} grid")
    x = reshape(transpose2d(f_corr), (1, c, th, tw))
    x = relu(conv2d(x, params["dec.w1"], stride=1, padding=1))
    x = upsample_nearest(x, 2)
    x = relu(conv2d(x, params["dec.w2"], stride=1, padding=1))
    x = upsample_nearest(x, 2)
    r = conv2d(x, params["dec.w3"], stride=1, padding=1)
    if image is not None:
        base = np.clip(np.asarray(image.data if isinstance(image, Tensor) else image,
                                  dtype=r.dtype), residual_eps, 1.0 - residual_eps)
        logit = np.log(base / (1.0 - base))
        r = add(r, Tensor(logit))
    return sigmoid(r)


# -- full pipeline ----------------------------------------------------------


def _extract_tokens(x: Tensor, params: dict, prefix: str) -> Tensor:
    """Conv stack 3 -> hidden -> hidden -> c with two stride-2 steps;
    output flattened row-major to [T, c] token features."""
    h1 = relu(conv2d(x, params[prefix + ".w1"], stride=2, padding=1))
    h2 = relu(conv2d(h1, params[prefix + ".w2"], stride=2, padding=1))
    h3 = conv2d(h2, params[prefix + ".w3"], stride=1, padding=1)
    _, c, th, tw = h3.data.shape
    return transpose2d(reshape(h3, (c, th * tw)))


def csec_correct(image: Tensor, params: dict, config: CsecConfig = CsecConfig()) -> Tensor:
    """Full correction: offsets -> branch features -> fusion -> decode."""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    n, c, h, w = image.data.shape
    if n != 1 or c != 3:
        raise ShapeMismatchError(f"expected [1,3,H,W], got {image.data.shape}")
    if h % 4 or w % 4 or h > 64 or w > 64:
        raise ShapeMismatchError("spatial extents must be multiples of 4, at most 64")
    _check_image_range(image)
    field = cose_forward(image, params)
    f_x = _extract_tokens(image, params, "ex")
    f_d = _extract_tokens(field.delta_d, params, "ed")
    f_b = _extract_tokens(field.delta_b, params, "eb")
    weights = FusionWeights(gamma_x=params["fuse.gx"], gamma_d=params["fuse.gd"],
                            gamma_b=params["fuse.gb"], bias=params["fuse.bias"])
    f_corr = como_fuse(f_x, f_d, f_b, weights)
    return decode(params, f_corr, (h, w), image=image, residual_eps=config.residual_eps)


# -- parameters and training ------------------------------------------------


def _uniform_init(rng: SplitMix64, shape, fan_in, dtype):
    limit = float(np.sqrt(3.0 / fan_in))
    return Tensor(rng.uniform_array(shape, -limit, limit).astype(dtype), requires_grad=True)


def init_csec(config: CsecConfig = CsecConfig(), seed: int = 0, dtype=np.float32,
              identity: bool = True) -> dict:
    """Initialize all CSEC parameters.

    identity=True zero-initializes the offset head's output layer, all tap
    offsets and the decoder's output layer (the identity-at-init contract);
    identity=False draws everything small and random, which is what the
    finite-difference checks want (no flat zero regions).
    """
    hid, c, k = config.hidden, config.feat_channels, config.kernel
    rng = SplitMix64(seed)
    p = {}

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def taps():
        if identity:
            return zeros((k * k, 2))
        return Tensor(rng.uniform_array((k * k, 2), -0.4, 0.4).astype(dtype),
                      requires_grad=True)

    p["cose.w1"] = _uniform_init(rng, (hid, 3, k, k), 3 * k * k, dtype)
    p["cose.t1"] = taps()
    p["cose.w2"] = zeros((6, hid, k, k)) if identity else _uniform_init(
        rng, (6, hid, k, k), hid * k * k, dtype)
    p["cose.t2"] = taps()
    for prefix in ("ex", "ed", "eb"):
        p[prefix + ".w1"] = _uniform_init(rng, (hid, 3, k, k), 3 * k * k, dtype)
        p[prefix + ".w2"] = _uniform_init(rng, (hid, hid, k, k), hid * k * k, dtype)
        p[prefix + ".w3"] = _uniform_init(rng, (c, hid, k, k), hid * k * k, dtype)
    p["fuse.gx"] = Tensor(np.array(1.0, dtype=dtype), requires_grad=True)
    p["fuse.gd"] = Tensor(np.array(0.1, dtype=dtype), requires_grad=True)
    p["fuse.gb"] = Tensor(np.array(0.1, dtype=dtype), requires_grad=True)
    p["fuse.bias"] = zeros((c,))
    p["dec.w1"] = _uniform_init(rng, (hid, c, 3, 3), c * 9, dtype)
    p["dec.w2"] = _uniform_init(rng, (hid, hid, 3, 3), hid * 9, dtype)
    p["dec.w3"] = zeros((3, hid, 3, 3)) if identity else _uniform_init(
        rng, (3, hid, 3, 3), hid * 9, dtype)
    return p


def mse_loss(a: Tensor, b) -> Tensor:
    bt = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    diff = add(a, scale(bt, -1.0))
    return tmean(mul(diff, diff))


def psnr(a, b) -> float:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def train_csec(pairs, params: dict, config: CsecConfig = CsecConfig(),
               epochs: int = 20, lr: float = 1e-3, seed: int = 0):
    """Self-supervised training on (corrupted, clean) image pairs with
    mean-squared pixel error.  Returns the per-epoch mean loss."""
    opt = Adam(params, lr=lr)
    order_rng = SplitMix64(seed)
    losses = []
    for _ in range(epochs):
        idx = list(range(len(pairs)))
        order_rng.shuffle(idx)
        total = 0.0
        for i in idx:
            corrupted, clean = pairs[i]
            out = csec_correct(Tensor(np.asarray(corrupted)), params, config)
            loss = mse_loss(out, clean)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data)
        losses.append(total / len(pairs))
    return losses
