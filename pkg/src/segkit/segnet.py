"""Toy segmentation model and training pipeline.

Architecture: optional frozen color correction -> patchify -> linear embed
-> transformer blocks (pre-norm, multi-head attention with rotary positions
on queries/keys, MLP, residuals) -> per-patch class logits -> nearest-
neighbor upsampling to pixel logits.  Training is plain cross-entropy with
an adaptive-moment optimizer, fully deterministic from the seeds.

The denoising loop trains once on the full set, scores every sample's
pixel-wise error rate under that model, drops the samples above the score
quantile, and retrains from a fresh seed-initialized model on the rest.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .csec import CsecConfig, csec_correct
from .denoise import (
    DenoiseConfig,
    ErrorScore,
    filter_dataset,
    pixel_error_rate,
    pixel_weight_map,
    quantile_threshold,
)
from .errors import ConfigInvalidError, EmptyDatasetError, ShapeMismatchError, TrainingDivergedError
from .metrics import ConfusionMatrix, miou
from .optim import Adam
from .rng import SplitMix64
from .rope import PatchGrid, freq_table, rope_attention
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose2d,
    upsample_nearest,
)

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "TrainReport",
    "FilterReport",
    "Model",
    "build_model",
    "train",
    "predict",
    "train_with_denoise",
    "param_count",
]


@dataclass
class ModelConfig:
    patch_size: int = 4
    embed_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    n_classes: int = 3
    use_csec: bool = False
    use_rope: bool = True
    image_size: tuple = (48, 48)
    seed: int = 0

    def validate(self):
        h, w = self.image_size
        if self.embed_dim % (4 * self.n_heads) != 0:
            raise ConfigInvalidError("embed_dim must be divisible by 4 * n_heads")
        if h % self.patch_size or w % self.patch_size:
            raise ConfigInvalidError("image size must be divisible by patch_size")
        if self.n_blocks < 1 or self.n_classes < 2:
            raise ConfigInvalidError("need n_blocks >= 1 and n_classes >= 2")


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    ignore_index: int = -1
    denoise: Optional[DenoiseConfig] = None
    retrain_from_scratch: bool = True
    seed: int = 0


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    val_mious: list = field(default_factory=list)


@dataclass
class FilterReport:
    scores: list  # ErrorScore per sample, original order
    threshold: float
    kept_ids: list
    dropped_ids: list


class Model:
    def __init__(self, config: ModelConfig, params: dict, dtype=np.float32,
                 csec_params: Optional[dict] = None, csec_config: CsecConfig = CsecConfig()):
        self.config = config
        self.params = params
        self.dtype = dtype
        self.csec_params = csec_params
        self.csec_config = csec_config
        h, w = config.image_size
        p = config.patch_size
        self.grid = PatchGrid(h // p, w // p)
        self.head_dim = config.embed_dim // config.n_heads
        self.freqs = freq_table(self.head_dim)

    def forward(self, image) -> Tensor:
        """image [1,3,H,W] -> pixel logits [1,K,H,W]."""
        cfg = self.config
        h, w = cfg.image_size
        arr = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=self.dtype)
        if arr.shape != (1, 3, h, w):
            raise ShapeMismatchError(f"expected [1,3,{h},{w}], got {arr.shape}")
        if cfg.use_csec and self.csec_params is not None:
            # frozen preprocessing: corrected pixels, no gradient into CSEC
            arr = csec_correct(Tensor(arr), self.csec_params, self.csec_config).data
        p = cfg.patch_size
        hp, wp = h // p, w // p
        patches = (arr[0].reshape(3, hp, p, wp, p)
                   .transpose(1, 3, 0, 2, 4)
                   .reshape(hp * wp, 3 * p * p))
        x = linear(Tensor(patches), self.params["embed.w"], self.params["embed.b"])
        for i in range(cfg.n_blocks):
            x = add(x, self._attention(i, x))
            x = add(x, self._mlp(i, x))
        logits = linear(x, self.params["head.w"], self.params["head.b"])  # [T,K]
        grid_logits = reshape(transpose2d(logits), (1, cfg.n_classes, hp, wp))
        return upsample_nearest(grid_logits, p)

    def _attention(self, i, x):
        pr = self.params
        cfg = self.config
        h = layer_norm(x, pr[f"b{i}.ln1.g"], pr[f"b{i}.ln1.b"])
        outs = []
        for hd in range(cfg.n_heads):
            q = matmul(h, pr[f"b{i}.h{hd}.wq"])
            k = matmul(h, pr[f"b{i}.h{hd}.wk"])
            v = matmul(h, pr[f"b{i}.h{hd}.wv"])
            if cfg.use_rope:
                outs.append(rope_attention(q, k, v, self.grid, self.freqs))
            else:
                scores = scale(matmul(q, k.T), 1.0 / np.sqrt(self.head_dim))
                outs.append(matmul(softmax(scores, axis=1), v))
        return matmul(concat(outs, axis=-1), pr[f"b{i}.attn.wo"])

    def _mlp(self, i, x):
        pr = self.params
        h = layer_norm(x, pr[f"b{i}.ln2.g"], pr[f"b{i}.ln2.b"])
        h = relu(linear(h, pr[f"b{i}.mlp.w1"], pr[f"b{i}.mlp.b1"]))
        return linear(h, pr[f"b{i}.mlp.w2"], pr[f"b{i}.mlp.b2"])


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count for a given configuration."""
    d, p, k = config.embed_dim, config.patch_size, config.n_classes
    dh = d // config.n_heads
    per_block = (2 * d  # ln1
                 + config.n_heads * 3 * d * dh  # q,k,v
                 + d * d  # output projection
                 + 2 * d  # ln2
                 + d * 2 * d + 2 * d + 2 * d * d + d)  # mlp
    return (3 * p * p * d + d) + config.n_blocks * per_block + (d * k + k)


def build_model(config: ModelConfig, seed: Optional[int] = None, dtype=np.float32,
                csec_params: Optional[dict] = None) -> Model:
    """Deterministically initialize a model from (config, seed)."""
    config.validate()
    if seed is None:
        seed = config.seed
    rng = SplitMix64(seed)
    d, p, k = config.embed_dim, config.patch_size, config.n_classes
    dh = d // config.n_heads

    def uni(shape, fan_in):
        limit = float(np.sqrt(3.0 / fan_in))
        return Tensor(rng.uniform_array(shape, -limit, limit).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params = {"embed.w": uni((3 * p * p, d), 3 * p * p), "embed.b": zeros((d,))}
    for i in range(config.n_blocks):
        params[f"b{i}.ln1.g"] = ones((d,))
        params[f"b{i}.ln1.b"] = zeros((d,))
        for hd in range(config.n_heads):
            params[f"b{i}.h{hd}.wq"] = uni((d, dh), d)
            params[f"b{i}.h{hd}.wk"] = uni((d, dh), d)
            params[f"b{i}.h{hd}.wv"] = uni((d, dh), d)
        params[f"b{i}.attn.wo"] = uni((d, d), d)
        params[f"b{i}.ln2.g"] = ones((d,))
        params[f"b{i}.ln2.b"] = zeros((d,))
        params[f"b{i}.mlp.w1"] = uni((d, 2 * d), d)
        params[f"b{i}.mlp.b1"] = zeros((2 * d,))
        params[f"b{i}.mlp.w2"] = uni((2 * d, d), 2 * d)
        params[f"b{i}.mlp.b2"] = zeros((d,))
    params["head.w"] = uni((d, k), d)
    params["head.b"] = zeros((k,))
    return Model(config, params, dtype=dtype, csec_params=csec_params)


def predict(model: Model, image) -> np.ndarray:
    """Per-pixel argmax mask [H,W]; ties break toward the lower class index."""
    logits = model.forward(image)
    return np.argmax(logits.data[0], axis=0)


def evaluate_miou(model: Model, pairs, ignore_index=-1, excluded_classes=()) -> float:
    cm = ConfusionMatrix(model.config.n_classes)
    for image, mask in pairs:
        cm.update(predict(model, image), mask, ignore_index=ignore_index)
    return miou(cm, excluded_classes)


def train(model: Model, dataset, config: TrainConfig, val_pairs=None,
          weight_maps=None) -> TrainReport:
    """Optimize cross-entropy over (image, mask) pairs.

    weight_maps, when given, is a per-sample list of [H,W] loss-weight maps
    (the pixel-downweighting denoise mode).
    """
    if not dataset:
        raise EmptyDatasetError("training set is empty")
    opt = Adam(model.params, lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)
    order_rng = SplitMix64(config.seed)
    report = TrainReport()
    for _ in range(config.epochs):
        idx = list(range(len(dataset)))
        order_rng.shuffle(idx)
        total = 0.0
        for start in range(0, len(idx), config.batch_size):
            batch = idx[start:start + config.batch_size]
            opt.zero_grad()
            for j in batch:
                image, mask = dataset[j]
                logits = model.forward(image)
                wmap = None if weight_maps is None else weight_maps[j][None]
                loss = cross_entropy(logits, mask[None], ignore_index=config.ignore_index,
                                     pixel_weights=wmap)
                lv = float(loss.data)
                if not np.isfinite(lv):
                    raise TrainingDivergedError("non-finite training loss")
                scale(loss, 1.0 / len(batch)).backward()
                total += lv
            opt.step()
        report.losses.append(total / len(idx))
        if val_pairs:
            report.val_mious.append(evaluate_miou(model, val_pairs,
                                                  ignore_index=config.ignore_index))
    return report


def score_samples(model: Model, samples, ignore_index=-1):
    """Pixel-wise error rate of the model on every (id, image, mask) sample."""
    scores = []
    for sid, image, mask in samples:
        pred = predict(model, image)
        err = pixel_error_rate(pred, mask, ignore_index=ignore_index)
        scores.append(ErrorScore(sample_id=sid, error_rate=err,
                                 evaluated_pixels=int(np.count_nonzero(mask != ignore_index))))
    return scores


def train_with_denoise(samples, model_config: ModelConfig, train_config: TrainConfig,
                       val_pairs=None, csec_params=None):
    """Full denoising loop: train -> score -> filter -> retrain.

    samples: list of (sample_id, image [1,3,H,W], mask [H,W]).
    Returns (round-2 model, round-2 TrainReport, FilterReport).
    """
    dn = train_config.denoise
    if dn is None:
        raise ConfigInvalidError("train_config.denoise must be set")
    pairs = [(img, mask) for _, img, mask in samples]
    model1 = build_model(model_config, csec_params=csec_params)
    train(model1, pairs, train_config, val_pairs=None)
    scores = score_samples(model1, samples, ignore_index=dn.ignore_index)

    if dn.mode == "drop_samples":
        kept = filter_dataset(scores, dn)
        kept_ids = [s.sample_id for s in kept]
        kept_set = set(kept_ids)
        dropped_ids = [s.sample_id for s in scores if s.sample_id not in kept_set]
        threshold = quantile_threshold([s.error_rate for s in scores], dn.quantile)
        dataset2 = [(img, mask) for sid, img, mask in samples if sid in kept_set]
        weight_maps = None
    else:
        # downweight mode: zero the loss weight of the highest-error pixels,
        # scored by 1 - p(true class) under the round-1 model
        threshold = float("nan")
        kept_ids = [s.sample_id for s in scores]
        dropped_ids = []
        dataset2 = pairs
        weight_maps = []
        for _, image, mask in samples:
            logits = model1.forward(image).data[0]
            z = logits - logits.max(axis=0, keepdims=True)
            prob = np.exp(z) / np.exp(z).sum(axis=0, keepdims=True)
            safe = np.where(mask == dn.ignore_index, 0, mask)
            p_true = np.take_along_axis(prob, safe[None], axis=0)[0]
            weight_maps.append(pixel_weight_map(1.0 - p_true, dn.quantile))

    freport = FilterReport(scores=scores, threshold=threshold,
                           kept_ids=kept_ids, dropped_ids=dropped_ids)
    if train_config.retrain_from_scratch:
        model2 = build_model(model_config, csec_params=csec_params)
    else:
        model2 = model1
    report2 = train(model2, dataset2, train_config, val_pairs=val_pairs,
                    weight_maps=weight_maps)
    return model2, report2, freport
