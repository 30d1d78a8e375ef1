"""Memorization-based data stealing and image fidelity metrics.

A generator learns to map a seeded noise sequence ``z_1..z_M`` one-to-one onto
``M`` sensitive inputs. Whoever knows the seed can regenerate the noise and
read the inputs back out of the generator.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .data import Dataset
from .nn import forward
from .trainer import TaskSpec

NOISE_KINDS = ("gaussian", "uniform")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    dim: int
    count: int
    seed: int

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.dim < 1 or self.count < 1:
            raise ValueError("noise dim and count must be >= 1")


@dataclass
class StealTarget:
    values: np.ndarray  # (M, dim), entries in [0, 1]
    shape: tuple = None  # per-sample image shape, e.g. (8, 8)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or len(self.values) < 1:
            raise ValueError("targets must be a non-empty (M, dim) array")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("target values must lie in [0, 1]")
        if self.shape is not None and int(np.prod(self.shape)) != self.values.shape[1]:
            raise ValueError(f"shape {self.shape} does not match target dim {self.values.shape[1]}")


def make_noise(spec):
    n = spec.count * spec.dim
    if spec.kind == "gaussian":
        z = rng.normal(spec.seed, rng.NOISE, n)
    else:
        z = 2.0 * rng.uniform(spec.seed, rng.NOISE, n) - 1.0
    return z.reshape(spec.count, spec.dim)


def build_memorization_task(targets, noise, gen_spec, key, task_id="memorize",
                            optimizer=None, batch_size=None):
    if not isinstance(targets, StealTarget):
        targets = StealTarget(targets)
    if gen_spec.input_dim != noise.dim:
        raise ValueError(f"generator input dim {gen_spec.input_dim} != noise dim {noise.dim}")
    if gen_spec.output_dim != targets.values.shape[1]:
        raise ValueError(f"generator output dim {gen_spec.output_dim} != target dim {targets.values.shape[1]}")
    if noise.count != len(targets.values):
        raise ValueError(f"{noise.count} noise vectors for {len(targets.values)} targets")
    if gen_spec.loss != "mse":
        raise ValueError("memorization needs a squared-error generator architecture")
    ds = Dataset(make_noise(noise), targets.values.copy())
    return TaskSpec(
        task_id=task_id,
        kind="memorization",
        spec=gen_spec,
        key=key,
        train=ds,
        val=ds,
        optimizer=optimizer or {"kind": "adam", "lr": 0.001},
        metric="mse",
        batch_size=batch_size or noise.count,
    )


def reconstruct(generator, noise):
    if generator.spec.input_dim != noise.dim:
        raise ValueError(f"generator input dim {generator.spec.input_dim} != noise dim {noise.dim}")
    return np.clip(forward(generator, make_noise(noise)), 0.0, 1.0)


def _pair(x_hat, x):
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    return x_hat, x


def mse_sample(x_hat, x):
    """L2 norm of the difference divided by the dimension (not the squared norm)."""
    x_hat, x = _pair(x_hat, x)
    d = (x_hat - x).ravel()
    scale = np.max(np.abs(d)) if d.size else 0.0
    if scale == 0:
        return 0.0
    # rescaled so tiny differences do not underflow when squared
    return float(scale * np.linalg.norm(d / scale) / x.size)


def mse_conventional(x_hat, x):
    """The usual mean of squared differences, for sanity checks."""
    x_hat, x = _pair(x_hat, x)
    return float(np.mean((x_hat - x) ** 2))


def ssim(x_hat, x, data_range=1.0):
    """Single-window SSIM over the whole image from global means/variances/covariance."""
    x_hat, x = _pair(x_hat, x)
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    a, b = x.ravel(), x_hat.ravel()
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean((a - mu_a) ** 2)
    var_b = np.mean((b - mu_b) ** 2)
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def synthetic_targets(count, side=8, seed=0):
    """Seeded grayscale images in [0, 1]: a few random soft blobs and a ramp each."""
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    u = rng.uniform(seed, rng.DATA, count * 14).reshape(count, 14)
    out = np.empty((count, side * side))
    for k in range(count):
        p = u[k]
        img = 0.4 * (p[0] * xx + p[1] * yy)
        for j in range(3):
            cy, cx, w, amp = p[2 + 4 * j: 6 + 4 * j]
            img = img + (amp * 1.6 - 0.6) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (0.1 + 0.25 * w) ** 2))
        img = img - img.min()
        out[k] = (img / max(img.max(), 1e-12)).ravel()
    return StealTarget(out, (side, side))


def to_pgm(image, shape):
    """Binary 8-bit PGM bytes for one image with values in [0, 1]."""
    h, w = shape
    pix = np.clip(np.rint(np.asarray(image, dtype=np.float64).reshape(h, w) * 255), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()
