"""Stateless numeric building blocks shared by the feature backends.

Everything here is plain numpy and safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention schedule for the forward noising process.

    abar[t] is the cumulative product at timestep t, with abar[0] == 1 and
    values strictly decreasing. Real schedules stay in (0, 1]; tests may opt
    in to a terminal zero via allow_zero.
    """

    abar: np.ndarray
    allow_zero: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.abar, dtype=np.float64)
        object.__setattr__(self, "abar", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("schedule must be a non-empty 1-D array")
        if arr[0] != 1.0:
            raise ValueError(f"abar[0] must be 1.0, got {arr[0]}")
        if arr.size > 1 and not (np.diff(arr) < 0).all():
            raise ValueError("abar must be strictly decreasing in t")
        lower_ok = (arr > 0).all() if not self.allow_zero else (arr >= 0).all()
        if not lower_ok or arr.max() > 1.0:
            bound = "(0, 1]" if not self.allow_zero else "[0, 1]"
            raise ValueError(f"abar values must lie in {bound}")

    @property
    def max_t(self) -> int:
        return self.abar.size - 1

    @classmethod
    def ddpm_linear(cls, max_t: int = 1000, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> "NoiseSchedule":
        """Linear-beta schedule; abar[t] = prod_{i<=t} (1 - beta_i), abar[0] = 1."""
        betas = np.linspace(beta_start, beta_end, max_t, dtype=np.float64)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(abar=abar)

    @classmethod
    def scaled_linear(cls, max_t: int = 1000, beta_start: float = 0.00085,
                      beta_end: float = 0.012) -> "NoiseSchedule":
        """Schedule with betas linear in sqrt-space, as used by latent diffusion."""
        sqrt_betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, max_t,
                                 dtype=np.float64)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - sqrt_betas ** 2)])
        return cls(abar=abar)


def add_noise(z0: np.ndarray, t: int, eps: np.ndarray,
              sched: NoiseSchedule) -> np.ndarray:
    """Forward-noise a latent: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.

    t = 0 returns z0 unchanged (bit-exact). Deterministic given eps.
    """
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"latent shape {z0.shape} does not match noise shape {eps.shape}")
    if not 0 <= t <= sched.max_t:
        raise ValueError(f"timestep {t} outside schedule range [0, {sched.max_t}]")
    abar = float(sched.abar[t])
    if abar == 1.0:
        return z0.copy()
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


@dataclass(frozen=True)
class PcaModel:
    """Fitted projection: row-centering mean plus an orthonormal basis."""

    mean: np.ndarray                       # (D,)
    basis: np.ndarray                      # (D, k), orthonormal columns
    explained_variance: np.ndarray         # (k,), non-increasing
    explained_variance_ratio: np.ndarray   # (k,), non-increasing

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.basis


def reduce_pca(X: np.ndarray, k: int) -> tuple[np.ndarray, PcaModel]:
    """Project rows of X onto the top-k principal directions.

    Components are ordered by decreasing explained variance; each basis
    column is sign-fixed so its largest-magnitude entry is positive.
    Zero-variance input yields all-zero projections rather than an error.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    n_rows, n_dims = X.shape
    if n_rows < 2:
        raise ValueError(f"need at least 2 rows to fit, got {n_rows}")
    if not 1 <= k <= min(n_rows - 1, n_dims):
        raise ValueError(f"k={k} outside valid range [1, {min(n_rows - 1, n_dims)}]")

    mean = X.mean(axis=0)
    centered = X - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variance = svals ** 2 / (n_rows - 1)
    total = variance.sum()

    if total == 0.0:
        basis = np.eye(n_dims, k, dtype=np.float64)
        zeros = np.zeros(k, dtype=np.float64)
        return (np.zeros((n_rows, k), dtype=np.float64),
                PcaModel(mean=mean, basis=basis, explained_variance=zeros,
                         explained_variance_ratio=zeros))

    basis = vt[:k].T.copy()
    for col in range(k):
        pivot = np.argmax(np.abs(basis[:, col]))
        if basis[pivot, col] < 0:
            basis[:, col] = -basis[:, col]

    return (centered @ basis,
            PcaModel(mean=mean, basis=basis, explained_variance=variance[:k],
                     explained_variance_ratio=variance[:k] / total))


def _axis_coords(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel-center sample positions of dst cells in src space (clamped)."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def upsample_bilinear(values: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resample (C, h, w) or (h, w) features to (..., H, W).

    Pixel-center (align_corners=false) semantics with edge clamping. Uses the
    lerp form, so constant inputs pass through exactly and outputs never
    overshoot the input range. Same-size calls return a copy unchanged.
    """
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (C, h, w) or (h, w) input, got shape {values.shape}")
    target_h, target_w = int(size[0]), int(size[1])
    if target_h < 1 or target_w < 1:
        raise ValueError(f"invalid target size {size}")
    _, h, w = arr.shape

    if (h, w) == (target_h, target_w):
        out = arr.copy()
        return out[0] if squeeze else out

    y0, y1, wy = _axis_coords(h, target_h)
    x0, x1, wx = _axis_coords(w, target_w)

    top = arr[:, y0[:, None], x0[None, :]]
    top = top + wx[None, None, :] * (arr[:, y0[:, None], x1[None, :]] - top)
    bottom = arr[:, y1[:, None], x0[None, :]]
    bottom = bottom + wx[None, None, :] * (arr[:, y1[:, None], x1[None, :]] - bottom)
    out = top + wy[None, :, None] * (bottom - top)
    return out[0] if squeeze else out


def area_downsample(values: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Average a 2-D map over the fractional cells of a coarser grid.

    Output cell (i, j) is the exact area-weighted mean of the input over
    [i*h/H, (i+1)*h/H) x [j*w/W, (j+1)*w/W). Works for any size ratio.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    target_h, target_w = int(size[0]), int(size[1])
    if target_h < 1 or target_w < 1:
        raise ValueError(f"invalid target size {size}")

    def weights(src: int, dst: int) -> np.ndarray:
        # mat[i, s] = |cell_i ∩ [s, s+1)| / (src / dst)
        mat = np.zeros((dst, src), dtype=np.float64)
        step = src / dst
        for i in range(dst):
            lo, hi = i * step, (i + 1) * step
            first, last = int(np.floor(lo)), int(np.ceil(hi))
            for s in range(first, min(last, src)):
                mat[i, s] = max(0.0, min(hi, s + 1) - max(lo, s))
        return mat / step

    return weights(arr.shape[0], target_h) @ arr @ weights(arr.shape[1], target_w).T
