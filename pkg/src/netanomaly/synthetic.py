"""Synthetic labeled traffic with exact ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .preprocessing import Dataset

ANOMALY_MODES = ("shifted-mean", "uniform-box", "feature-spike")


@dataclass
class SyntheticSpec:
    n_normal: int = 2000
    n_anomaly: int = 100
    dims: int = 8
    cluster_stddev: float = 1.0
    anomaly_mode: str = "shifted-mean"
    shift_magnitude: float = 6.0  # in units of cluster_stddev
    seed: int = 42

    def __post_init__(self):
        if self.n_normal < 0 or self.n_anomaly < 0:
            raise ValueError("counts must be nonnegative")
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if self.anomaly_mode not in ANOMALY_MODES:
            raise ValueError(f"anomaly_mode must be one of {ANOMALY_MODES}")
        if self.n_normal + self.n_anomaly == 0:
            raise ValueError("spec produces no records")

    def to_dict(self) -> dict:
        return asdict(self)


CANONICAL = SyntheticSpec()


def synth_dataset(spec: SyntheticSpec) -> Dataset:
    """Gaussian normal cluster plus anomalies, shuffled into a seeded chronological order.

    shifted-mean: Gaussian with the same spread, centred ``shift`` stddevs away
    along a random unit direction.  uniform-box: uniform in the cube of
    half-width ``shift`` stddevs.  feature-spike: a normal point with one random
    feature pushed to +/- ``shift`` stddevs.
    """
    rng = np.random.default_rng(spec.seed)
    sd = spec.cluster_stddev
    normal = rng.normal(0.0, sd, size=(spec.n_normal, spec.dims))
    k = spec.n_anomaly
    if spec.anomaly_mode == "shifted-mean":
        direction = rng.normal(size=spec.dims)
        direction /= np.linalg.norm(direction)
        anomalies = rng.normal(0.0, sd, size=(k, spec.dims)) + spec.shift_magnitude * sd * direction
    elif spec.anomaly_mode == "uniform-box":
        half = spec.shift_magnitude * sd
        anomalies = rng.uniform(-half, half, size=(k, spec.dims))
    else:
        anomalies = rng.normal(0.0, sd, size=(k, spec.dims))
        cols = rng.integers(spec.dims, size=k)
        signs = rng.choice([-1.0, 1.0], size=k)
        anomalies[np.arange(k), cols] = signs * spec.shift_magnitude * sd
    x = np.vstack([normal, anomalies])
    y = np.r_[np.zeros(spec.n_normal, dtype=np.int64), np.ones(k, dtype=np.int64)]
    order = rng.permutation(x.shape[0])
    return Dataset(
        x[order],
        y[order],
        np.arange(x.shape[0]),
        [f"f{i}" for i in range(spec.dims)],
        provenance=f"synthetic {spec.to_dict()}",
    )


def outlier_fixture(seed: int = 42, n: int = 200, dims: int = 2, sigma: float = 0.1):
    """Tight Gaussian cluster plus one point at 10 sigma; returns (points, outlier_row, medoid_row)."""
    rng = np.random.default_rng(seed)
    cluster = rng.normal(0.0, sigma, size=(n, dims))
    outlier = np.full((1, dims), 10.0 * sigma / np.sqrt(dims))
    pts = np.vstack([cluster, outlier])
    dists = np.linalg.norm(cluster[:, None, :] - cluster[None, :, :], axis=2).sum(axis=1)
    return pts, n, int(np.argmin(dists))
