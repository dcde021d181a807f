"""Procedural desk-scale datasets.

Families stand in for the image corpora of a real extraction study:
``grid-digits`` (6x6 glyphs, an easy task), ``spirals`` (a hard
2-D task), ``blobs`` and two noise controls.  Every input lies in
``[-1, 1]^d``, the oracle's declared domain; noise is clipped, never
rescaled.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import jsonio
from .exceptions import ConfigurationError, ValidationError
from .rng import make_rng
from .validation import check_fraction

FAMILIES = ("blobs", "spirals", "grid-digits", "uniform-noise", "standard-normal-noise")

_GLYPHS = {
    0: [".####.", "#....#", "#....#", "#....#", "#....#", ".####."],
    1: ["..##..", ".###..", "..##..", "..##..", "..##..", ".####."],
    2: [".####.", "#....#", "....#.", "..##..", ".#....", "######"],
    3: ["#####.", ".....#", "..###.", ".....#", ".....#", "#####."],
    4: ["#...#.", "#...#.", "######", "....#.", "....#.", "....#."],
    5: ["######", "#.....", "#####.", ".....#", ".....#", "#####."],
    6: [".####.", "#.....", "#####.", "#....#", "#....#", ".####."],
    7: ["######", "....#.", "...#..", "..#...", ".#....", ".#...."],
    8: [".####.", "#....#", ".####.", "#....#", "#....#", ".####."],
    9: [".####.", "#....#", "#....#", ".#####", ".....#", ".####."],
}
GLYPH_DIM = 36


def glyph_templates(n_classes: int) -> np.ndarray:
    """``(n_classes, 36)`` array of digit glyphs with pixels in {-1, +1}."""
    return np.array([[1.0 if c == "#" else -1.0 for row in _GLYPHS[k] for c in row]
                     for k in range(n_classes)])


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    n_samples: int
    n_features: int
    n_classes: int
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if min(self.n_samples, self.n_features, self.n_classes) < 1:
            raise ConfigurationError("n_samples, n_features and n_classes must be positive")
        if self.family == "spirals" and self.n_features != 2:
            raise ConfigurationError("spirals are two-dimensional (n_features=2)")
        if self.family == "grid-digits" and (self.n_features != GLYPH_DIM or self.n_classes > 10):
            raise ConfigurationError("grid-digits needs n_features=36 and at most 10 classes")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    name: str = "dataset"
    spec: SyntheticSpec | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValidationError("inputs must be N x d with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError("labels out of range")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def head(self, n: int) -> "Dataset":
        return replace(self, inputs=self.inputs[:n], labels=self.labels[:n])

    def to_dict(self) -> dict:
        doc = {"name": self.name, "d": self.n_features, "K": self.n_classes,
               "split": self.split, "inputs": self.inputs, "labels": self.labels}
        if self.spec is not None:
            doc["spec"] = asdict(self.spec)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Dataset":
        inputs = np.array(doc["inputs"], dtype=np.float64).reshape(-1, doc["d"])
        spec = SyntheticSpec(**doc["spec"]) if doc.get("spec") else None
        return cls(inputs, doc["labels"], doc["K"], doc.get("split", "train"),
                   doc.get("name", "dataset"), spec)

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(jsonio.load(Path(path)))


def _balanced_labels(n: int, k: int, rng) -> np.ndarray:
    return (np.arange(n) % k)[rng.permutation(n)]


def generate(spec: SyntheticSpec, split: str = "train") -> Dataset:
    """Deterministic dataset for ``spec``; the test split uses an independent stream."""
    spec.validate()
    if split not in ("train", "test"):
        raise ConfigurationError(f"unknown split {split!r}")
    base = make_rng(spec.seed)
    # the class geometry (centres) is shared by both splits
    geometry = base.spawn(0)
    rng = base.spawn(1 if split == "train" else 2)
    n, d, k, sigma = spec.n_samples, spec.n_features, spec.n_classes, spec.noise_sigma
    labels = _balanced_labels(n, k, rng)

    if spec.family == "blobs":
        centers = geometry.uniform(-0.8, 0.8, size=(k, d))
        x = centers[labels] + sigma * rng.normal(size=(n, d))
    elif spec.family == "spirals":
        t = rng.random(n)
        radius = 0.1 + 0.85 * t
        angle = 3.0 * np.pi * t + 2.0 * np.pi * labels / k
        x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        x = x + sigma * rng.normal(size=(n, 2))
    elif spec.family == "grid-digits":
        x = 0.8 * glyph_templates(k)[labels] + sigma * rng.normal(size=(n, d))
    elif spec.family == "uniform-noise":
        x = rng.uniform(-1.0, 1.0, size=(n, d))
    else:
        x = rng.normal(size=(n, d))
    name = f"{spec.family}-k{k}-d{d}-s{spec.seed}"
    return Dataset(np.clip(x, -1.0, 1.0), labels, k, split, name, spec)


def interpolate(x_target, x_surrogate, lam: float) -> np.ndarray:
    """Convex blend ``(1 - lam) * x_target + lam * x_surrogate``."""
    lam = check_fraction(lam, "lambda")
    x_t = np.asarray(x_target, dtype=np.float64)
    x_s = np.asarray(x_surrogate, dtype=np.float64)
    if x_t.shape != x_s.shape:
        raise ValidationError(f"shape mismatch {x_t.shape} vs {x_s.shape}; adapt_shape first")
    return np.clip((1.0 - lam) * x_t + lam * x_s, -1.0, 1.0)


def skew_classes(ds: Dataset, keep) -> Dataset:
    keep = sorted({int(c) for c in keep})
    if not keep:
        raise ValidationError("keep must name at least one class")
    if keep[0] < 0 or keep[-1] >= ds.n_classes:
        raise ValidationError(f"classes {keep} outside 0..{ds.n_classes - 1}")
    mask = np.isin(ds.labels, keep)
    return replace(ds, inputs=ds.inputs[mask], labels=ds.labels[mask],
                   name=f"{ds.name}-skew{len(keep)}")


def adapt_shape(x, n_features: int) -> np.ndarray:
    """Tile-and-truncate (or truncate) the trailing axis of ``x`` to ``n_features``."""
    x = np.asarray(x, dtype=np.float64)
    src = x.shape[-1]
    if n_features < 1 or src < 1:
        raise ValidationError("dimensions must be positive")
    if src == n_features:
        return x
    reps = -(-n_features // src)
    tiled = np.concatenate([x] * reps, axis=-1) if reps > 1 else x
    return tiled[..., :n_features]
