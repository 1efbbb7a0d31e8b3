"""Seeded synthetic local features built from sparse combinations of latent atoms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def latent_atoms(dim: int, n_atoms: int, rng) -> np.ndarray:
    """dim x n_atoms matrix of unit-norm Gaussian directions."""
    A = rng.standard_normal((dim, n_atoms))
    return A / np.linalg.norm(A, axis=0)


def sparse_features(atoms, n: int, n_active: int, noise: float, rng, probs=None) -> np.ndarray:
    """``n`` features, each a combination of ``n_active`` distinct atoms plus isotropic noise.

    Coefficients are standard normal; ``probs`` biases which atoms are picked.
    """
    dim, n_atoms = atoms.shape
    U = np.zeros((n, n_atoms))
    for i in range(n):
        idx = rng.choice(n_atoms, size=n_active, replace=False, p=probs)
        U[i, idx] = rng.standard_normal(n_active)
    return U @ atoms.T + noise * rng.standard_normal((n, dim))


@dataclass(frozen=True)
class ResolutionData:
    train: np.ndarray
    test: np.ndarray
    atoms: np.ndarray


def resolution_features(seed: int = 0, dim: int = 1000, n_atoms: int = 100, n_train: int = 4000,
                        n_test: int = 1000, n_active: int = 5, noise: float = 0.03) -> ResolutionData:
    """Training and held-out features for the partition-resolution experiment."""
    rng = np.random.default_rng(seed)
    atoms = latent_atoms(dim, n_atoms, rng)
    X = sparse_features(atoms, n_train + n_test, n_active, noise, rng)
    return ResolutionData(X[:n_train], X[n_train:], atoms)


@dataclass(frozen=True)
class ImageDataset:
    """Images are (n_features, dim) arrays; ``split`` holds "train" or "test" per image."""

    images: list
    labels: np.ndarray
    split: np.ndarray
    atoms: np.ndarray

    def subset(self, which: str):
        idx = np.flatnonzero(self.split == which)
        return [self.images[i] for i in idx], self.labels[idx]


def class_patterns(n_classes, n_atoms, n_patterns, pattern_size, rng):
    """Per class, ``n_patterns`` fixed sparse coefficient vectors over the shared atoms."""
    out = np.zeros((n_classes, n_patterns, n_atoms))
    for c in range(n_classes):
        for j in range(n_patterns):
            idx = rng.choice(n_atoms, size=pattern_size, replace=False)
            out[c, j, idx] = rng.choice([-1.0, 1.0], size=pattern_size) * rng.uniform(0.5, 1.5, size=pattern_size)
    return out


def image_dataset(seed: int = 0, n_classes: int = 5, n_train: int = 50, n_test: int = 20,
                  n_features: int = 64, dim: int = 256, n_atoms: int = 100, n_patterns: int = 60,
                  pattern_size: int = 3, class_fraction: float = 0.15, jitter: float = 0.3,
                  noise: float = 0.005) -> ImageDataset:
    """Labelled images whose classes differ only in which atoms co-occur.

    Every class owns ``n_patterns`` sparse atom combinations with fixed signs.
    A fraction ``class_fraction`` of an image's features are instances of its
    class patterns, scaled by a random gain and perturbed coefficient-wise by
    ``jitter``; the rest are random combinations shared by all classes.
    Images are ordered class by class, training images first.
    """
    rng = np.random.default_rng(seed)
    atoms = latent_atoms(dim, n_atoms, rng)
    patterns = class_patterns(n_classes, n_atoms, n_patterns, pattern_size, rng)
    n_class_feats = int(round(class_fraction * n_features))
    images, labels, split = [], [], []
    for part, count in (("train", n_train), ("test", n_test)):
        for c in range(n_classes):
            for _ in range(count):
                pick = rng.integers(n_patterns, size=n_class_feats)
                gain = rng.uniform(0.5, 2.0, size=(n_class_feats, 1))
                U = patterns[c, pick]
                U = gain * (U + jitter * rng.standard_normal(U.shape) * (U != 0))
                own = U @ atoms.T + noise * rng.standard_normal((n_class_feats, dim))
                shared = sparse_features(atoms, n_features - n_class_feats, pattern_size, noise, rng)
                X = np.vstack([own, shared])
                images.append(X[rng.permutation(n_features)])
                labels.append(c)
                split.append(part)
    return ImageDataset(images, np.asarray(labels, dtype=np.int64), np.asarray(split), atoms)
