"""Sum-pooling and the normalisations applied to pooled Fisher vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class NormalizationSpec:
    """How a pooled vector is normalised.

    ``order`` is ``"power-intra"`` (power first, the default) or
    ``"intra-power"``. ``global_l2`` rescales the final vector to unit norm.
    """

    subvector_len: int
    power_alpha: float = 0.5
    apply_power: bool = True
    apply_intra: bool = True
    order: str = "power-intra"
    global_l2: bool = False

    def __post_init__(self):
        if not 0 < self.power_alpha <= 1:
            raise ValueError(f"power_alpha must lie in (0, 1], got {self.power_alpha}")
        if self.subvector_len < 1:
            raise ValueError(f"subvector_len must be positive, got {self.subvector_len}")
        if self.order not in ("power-intra", "intra-power"):
            raise ValueError(f"unknown normalisation order {self.order!r}")


def sum_pool(per_feature) -> np.ndarray:
    """Elementwise sum of equal-length vectors, accumulated in list order."""
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in per_feature]
    if not vecs:
        raise ValueError("sum_pool needs at least one vector")
    n = vecs[0].size
    for i, v in enumerate(vecs):
        if v.size != n:
            raise DimensionError(f"vector {i} has length {v.size}, expected {n}")
    return np.sum(np.stack(vecs), axis=0)


def power_normalize(v, alpha: float = 0.5) -> np.ndarray:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    v = np.asarray(v, dtype=np.float64)
    if alpha == 1:
        return v.copy()
    return np.sign(v) * np.abs(v) ** alpha


def intra_normalize(v, subvector_len: int) -> np.ndarray:
    """l2-normalise each contiguous block of ``subvector_len`` entries; zero blocks stay zero."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if subvector_len < 1 or v.size % subvector_len:
        raise DimensionError(f"length {v.size} is not divisible by sub-vector length {subvector_len}")
    blocks = v.reshape(-1, subvector_len)
    norms = np.linalg.norm(blocks, axis=1, keepdims=True)
    out = np.divide(blocks, norms, out=np.zeros_like(blocks), where=norms > 0)
    return out.ravel()


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v.copy()


def normalize(v, spec: NormalizationSpec) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    steps = ["power", "intra"] if spec.order == "power-intra" else ["intra", "power"]
    for step in steps:
        if step == "power" and spec.apply_power:
            v = power_normalize(v, spec.power_alpha)
        elif step == "intra" and spec.apply_intra:
            v = intra_normalize(v, spec.subvector_len)
    if spec.global_l2:
        v = l2_normalize(v)
    return v
