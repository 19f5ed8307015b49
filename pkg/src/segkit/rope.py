"""Rotary positional embedding for 2D image patches.

Each query/key vector is split into 2D sub-vector pairs (x_{2i}, x_{2i+1});
pair i is rotated by the angle p * w_i where p is the integer patch position
and w_i = base^(-2i/d).  The 2D extension is axial: the first half of the
head dimension encodes the row index and the second half the column index,
each with its own frequency table of head_dim d/2.  Rotations touch Q and K
only, so relative position enters attention purely through the inner product.

Angles are computed in f64 and cast to the input dtype to avoid trig drift
for large positions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimNotDivisibleBy4Error, OddHeadDimError, ShapeMismatchError
from .tensor import Tensor, matmul, scale, softmax

__all__ = ["FreqTable", "PatchGrid", "freq_table", "rotate", "rotate_2d", "rope_attention"]


@dataclass(frozen=True)
class FreqTable:
    head_dim: int
    base: float
    freqs: np.ndarray  # shape (head_dim/2,), f64, strictly decreasing from 1

    def half_table(self) -> "FreqTable":
        """Frequency table for one axis of the axial 2D scheme."""
        return freq_table(self.head_dim // 2, self.base)


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def positions(self) -> np.ndarray:
        """Row-major (py, px) pairs, shape (rows*cols, 2)."""
        py, px = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return np.stack([py.reshape(-1), px.reshape(-1)], axis=1)


def freq_table(head_dim: int, base: float = 10000.0) -> FreqTable:
    if head_dim < 2 or head_dim % 2 != 0:
        raise OddHeadDimError(f"head_dim must be even and >= 2, got {head_dim}")
    i = np.arange(head_dim // 2, dtype=np.float64)
    freqs = float(base) ** (-2.0 * i / head_dim)
    return FreqTable(head_dim=head_dim, base=float(base), freqs=freqs)


def _rotate_array(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rotate pairs (x_{2i}, x_{2i+1}) by angles theta[..., i] (broadcastable)."""
    cos = np.cos(theta)
    sin = np.sin(theta)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rotate(x: Tensor, p, freqs: FreqTable) -> Tensor:
    """Apply the pairwise planar rotation with angles p * w_i to the last axis."""
    d = freqs.head_dim
    if x.data.shape[-1] != d:
        raise ShapeMismatchError(f"last extent {x.data.shape[-1]} != head_dim {d}")
    theta = (float(p) * freqs.freqs).astype(np.float64)
    th = theta.astype(x.dtype) if x.dtype == np.float32 else theta

    def bwd(g):
        return (_rotate_array(g, -th),)

    return Tensor(_rotate_array(x.data, th), parents=(x,), backward_fn=bwd)


def rotate_2d(x: Tensor, pos, freqs: FreqTable) -> Tensor:
    """Axial 2D rotation: first d/2 dims by the row index, last d/2 by the column.

    ``freqs`` is the full-dimension table; each half uses its half_table().
    """
    d = freqs.head_dim
    if d % 4 != 0:
        raise DimNotDivisibleBy4Error(f"head_dim {d} must be divisible by 4")
    if x.data.shape[-1] != d:
        raise ShapeMismatchError(f"last extent {x.data.shape[-1]} != head_dim {d}")
    py, px = pos
    half = freqs.half_table().freqs
    theta = np.concatenate([float(py) * half, float(px) * half])
    th = theta.astype(x.dtype) if x.dtype == np.float32 else theta

    def bwd(g):
        return (_rotate_array(g, -th),)

    return Tensor(_rotate_array(x.data, th), parents=(x,), backward_fn=bwd)


def _rotate_rows(x: Tensor, positions: np.ndarray, freqs: FreqTable) -> Tensor:
    """rotate_2d applied row-wise: x[t] rotated by positions[t] = (py, px)."""
    d = freqs.head_dim
    if d % 4 != 0:
        raise DimNotDivisibleBy4Error(f"head_dim {d} must be divisible by 4")
    half = freqs.half_table().freqs
    theta = np.concatenate([positions[:, :1] * half, positions[:, 1:] * half], axis=1)
    th = theta.astype(x.dtype) if x.dtype == np.float32 else theta

    def bwd(g):
        return (_rotate_array(g, -th),)

    return Tensor(_rotate_array(x.data, th), parents=(x,), backward_fn=bwd)


def rope_attention(q: Tensor, k: Tensor, v: Tensor, grid: PatchGrid, freqs: FreqTable) -> Tensor:
    """Scaled dot-product attention with rotary positions on queries and keys.

    q, k: [T, d]; v: [T, dv]; T must equal grid.rows * grid.cols.
    """
    t, d = q.data.shape
    if k.data.shape != (t, d) or v.data.shape[0] != t:
        raise ShapeMismatchError(f"q {q.data.shape}, k {k.data.shape}, v {v.data.shape}")
    if t != grid.n_patches:
        raise ShapeMismatchError(f"{t} tokens vs {grid.rows}x{grid.cols} grid")
    positions = grid.positions().astype(np.float64)
    qr = _rotate_rows(q, positions, freqs)
    kr = _rotate_rows(k, positions, freqs)
    scores = scale(matmul(qr, kr.T), 1.0 / np.sqrt(d))
    attn = softmax(scores, axis=1)
    return matmul(attn, v)
