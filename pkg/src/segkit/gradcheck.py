"""Finite-difference gradient suites for every differentiable operation.

Each suite runs seeded random trials in f64 and reports the worst relative
error per op.  The CLI's gradcheck subcommand and the acceptance tests both
drive these.
"""

import numpy as np

from . import csec as _csec
from . import rope as _rope
from .rng import SplitMix64
from .segnet import ModelConfig, build_model
from .tensor import (
    Tensor,
    add,
    conv2d,
    cross_entropy,
    finite_diff_grad,
    matmul,
    mul,
    rel_error,
    relu,
    softmax,
    tsum,
)

TOL = 1e-4
H_STEP = 1e-5

__all__ = ["TOL", "run_suite", "SUITES", "check_function"]


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform_array(shape, lo, hi)


def check_function(f, x_arr, h=H_STEP):
    """Worst relative error between backward and central differences at x."""
    x = Tensor(np.asarray(x_arr, dtype=np.float64), requires_grad=True)
    f(x).backward()
    numeric = finite_diff_grad(f, x, h=h)
    return rel_error(x.grad, numeric)


def _suite_tensor(trials, seed):
    rng = SplitMix64(seed)
    worst = {}
    for t in range(trials):
        a = _rand(rng, (3, 4))
        b = _rand(rng, (4, 2))
        worst["matmul"] = max(worst.get("matmul", 0.0), check_function(
            lambda x: tsum(matmul(x, Tensor(b))), a))
        x = _rand(rng, (1, 2, 5, 5))
        w = _rand(rng, (3, 2, 3, 3))
        worst["conv2d.input"] = max(worst.get("conv2d.input", 0.0), check_function(
            lambda v: tsum(relu(conv2d(v, Tensor(w), stride=1, padding=1))), x))
        worst["conv2d.kernel"] = max(worst.get("conv2d.kernel", 0.0), check_function(
            lambda v: tsum(relu(conv2d(Tensor(x), v, stride=1, padding=1))), w))
        m = _rand(rng, (6,))
        other = _rand(rng, (6,))
        worst["mul"] = max(worst.get("mul", 0.0), check_function(
            lambda v: tsum(mul(v, Tensor(other))), m))
        worst["softmax"] = max(worst.get("softmax", 0.0), check_function(
            lambda v: tsum(mul(softmax(v, axis=-1), Tensor(other))), m))
        logits = _rand(rng, (1, 4, 3, 3), -2.0, 2.0)
        target = np.array([[rng.randint(0, 4) for _ in range(9)]]).reshape(1, 3, 3)
        worst["cross_entropy"] = max(worst.get("cross_entropy", 0.0), check_function(
            lambda v: cross_entropy(v, target), logits))
    return worst


def _suite_rope(trials, seed):
    rng = SplitMix64(seed)
    freqs = _rope.freq_table(8)
    grid = _rope.PatchGrid(2, 2)
    worst = {}
    for t in range(trials):
        x = _rand(rng, (3, 8))
        weight = _rand(rng, (3, 8))
        p = rng.randint(0, 7)
        worst["rotate"] = max(worst.get("rotate", 0.0), check_function(
            lambda v: tsum(mul(_rope.rotate(v, p, freqs), Tensor(weight))), x))
        q = _rand(rng, (4, 8))
        k = _rand(rng, (4, 8))
        v = _rand(rng, (4, 8))
        worst["rope_attention.q"] = max(worst.get("rope_attention.q", 0.0), check_function(
            lambda u: tsum(_rope.rope_attention(u, Tensor(k), Tensor(v), grid, freqs)), q))
        worst["rope_attention.k"] = max(worst.get("rope_attention.k", 0.0), check_function(
            lambda u: tsum(_rope.rope_attention(Tensor(q), u, Tensor(v), grid, freqs)), k))
    return worst


def _suite_csec(trials, seed):
    rng = SplitMix64(seed)
    worst = {}
    for t in range(trials):
        x = _rand(rng, (1, 2, 5, 5))
        w = _rand(rng, (2, 2, 3, 3))
        taps = _rand(rng, (9, 2), -0.8, 0.8)
        taps += np.where(np.abs(taps - np.round(taps)) < 0.05, 0.1, 0.0)  # stay off integer kinks
        worst["offset_conv.input"] = max(worst.get("offset_conv.input", 0.0), check_function(
            lambda v: tsum(_csec.offset_conv(v, Tensor(w), Tensor(taps))), x))
        worst["offset_conv.kernel"] = max(worst.get("offset_conv.kernel", 0.0), check_function(
            lambda v: tsum(_csec.offset_conv(Tensor(x), v, Tensor(taps))), w))
        worst["offset_conv.taps"] = max(worst.get("offset_conv.taps", 0.0), check_function(
            lambda v: tsum(_csec.offset_conv(Tensor(x), Tensor(w), v)), taps))
        f = _rand(rng, (4, 3), 0.2, 1.0)
        worst["sym_norm"] = max(worst.get("sym_norm", 0.0), check_function(
            lambda v: tsum(_csec.sym_norm(matmul(v, Tensor(f.T.copy())))), f))
        fx, fd, fb = (_rand(rng, (4, 3), 0.2, 1.0) for _ in range(3))
        weights = _csec.FusionWeights(
            gamma_x=Tensor(np.array(0.7), requires_grad=True),
            gamma_d=Tensor(np.array(0.5), requires_grad=True),
            gamma_b=Tensor(np.array(0.3), requires_grad=True),
            bias=Tensor(_rand(rng, (3,)), requires_grad=True))
        worst["como_fuse"] = max(worst.get("como_fuse", 0.0), check_function(
            lambda v: tsum(_csec.como_fuse(v, Tensor(fd), Tensor(fb), weights)), fx))
    # end-to-end: every learned parameter of a small random-init pipeline
    cfg = _csec.CsecConfig(feat_channels=3, hidden=4)
    params = _csec.init_csec(cfg, seed=seed + 1, dtype=np.float64, identity=False)
    img = SplitMix64(seed + 2).uniform_array((1, 3, 8, 8), 0.05, 0.95)
    target = SplitMix64(seed + 3).uniform_array((1, 3, 8, 8), 0.05, 0.95)
    worst["csec_correct.params"] = _check_params(
        params,
        lambda: _csec.mse_loss(_csec.csec_correct(Tensor(img), params, cfg), target))
    return worst


def _suite_segnet(seed):
    cfg = ModelConfig(patch_size=4, embed_dim=16, n_blocks=2, n_heads=2,
                      n_classes=3, image_size=(16, 16), seed=seed)
    model = build_model(cfg, dtype=np.float64)
    rng = SplitMix64(seed + 9)
    img = rng.uniform_array((1, 3, 16, 16), 0.0, 1.0)
    mask = np.array([[rng.randint(0, 3) for _ in range(16 * 16)]]).reshape(1, 16, 16)
    worst = _check_params(model.params,
                          lambda: cross_entropy(model.forward(img), mask))
    return {"segnet.params": worst}


def _check_params(params, loss_fn, h=H_STEP):
    """Finite-difference every entry of every parameter tensor against
    backward gradients of loss_fn; returns the worst relative error."""
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(analytic[name].reshape(-1), num))
    return worst


def run_suite(module: str, trials: int = 20, seed: int = 0):
    """Run one named suite; returns {op name: worst relative error}."""
    if module == "tensor":
        return _suite_tensor(trials, seed)
    if module == "rope":
        return _suite_rope(trials, seed)
    if module == "csec":
        return _suite_csec(trials, seed)
    if module == "segnet":
        return _suite_segnet(seed)
    raise ValueError(f"unknown module {module!r}")


SUITES = ("tensor", "rope", "csec", "segnet")
