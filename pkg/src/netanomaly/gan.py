"""Tabular GAN with hand-written backpropagation.

Generator and discriminator are small dense MLPs.  The discriminator is
trained by gradient ascent on the minibatch value function and the generator
by gradient descent on the saturating ``log(1 - D(G(z)))`` objective, both
with plain SGD steps so the gradients can be checked against finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import FlopCounter, ShapeError, as_dense, matmul

LOG_EPS = 1e-7
ACTIVATIONS = ("relu", "sigmoid", "identity")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (1, fan_out)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = as_dense(self.weights)
        self.bias = as_dense(self.bias).reshape(1, -1)
        if self.bias.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"bias {self.bias.shape} does not match weights {self.weights.shape}")


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ShapeError(
                    f"layer widths do not chain: {a.weights.shape} then {b.weights.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for l in self.layers:
            out.extend([l.weights, l.bias])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls(
            [
                Layer(
                    np.asarray(l["weights"], dtype=np.float64).reshape(len(l["weights"]), -1),
                    np.asarray(l["bias"], dtype=np.float64),
                    l["activation"],
                )
                for l in d["layers"]
            ]
        )


def init_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros((1, fan_out)), act))
    return MlpParams(layers)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def mlp_forward(
    params: MlpParams, x, counter: FlopCounter | None = None, keep: bool = False
):
    """Affine + activation per layer.  With ``keep=True`` also returns the cache."""
    a = as_dense(x, cols=params.in_dim)
    if a.shape[1] != params.in_dim:
        raise ShapeError(f"input has {a.shape[1]} columns, network expects {params.in_dim}")
    cache = [a]
    for layer in params.layers:
        z = matmul(a, layer.weights, counter) + layer.bias
        a = _activate(z, layer.activation)
        cache.append(a)
    return (a, cache) if keep else a


def mlp_backward(params: MlpParams, cache: list[np.ndarray], grad_out: np.ndarray):
    """Gradients of a scalar w.r.t. every layer, given d(scalar)/d(output).

    Returns (per-layer [dW, db] list, d(scalar)/d(input)).
    """
    grads = []
    g = grad_out
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        out = cache[i + 1]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "sigmoid":
            g = g * out * (1.0 - out)
        inp = cache[i]
        grads.append(Layer(inp.T @ g, g.sum(axis=0, keepdims=True), layer.activation))
        g = g @ layer.weights.T
    grads.reverse()
    return MlpParams(grads), g


@dataclass
class GanModel:
    generator: MlpParams
    discriminator: MlpParams
    noise_dim: int = 100
    iterations_trained: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.generator.in_dim != self.noise_dim:
            raise ShapeError("generator input width must equal noise_dim")
        if self.generator.out_dim != self.discriminator.in_dim:
            raise ShapeError("generator output width must equal discriminator input width")
        if self.discriminator.out_dim != 1 or self.discriminator.layers[-1].activation != "sigmoid":
            raise ShapeError("discriminator must end in a single sigmoid unit")

    @property
    def feature_dim(self) -> int:
        return self.generator.out_dim

    @property
    def n_params(self) -> int:
        return self.generator.n_params + self.discriminator.n_params

    def copy(self) -> "GanModel":
        return GanModel(
            self.generator.copy(),
            self.discriminator.copy(),
            self.noise_dim,
            self.iterations_trained,
            self.rng_seed,
        )

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "noise_dim": self.noise_dim,
            "iterations_trained": self.iterations_trained,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GanModel":
        return cls(
            MlpParams.from_dict(d["generator"]),
            MlpParams.from_dict(d["discriminator"]),
            int(d["noise_dim"]),
            int(d["iterations_trained"]),
            int(d["rng_seed"]),
        )


def init_gan(
    feature_dim: int,
    noise_dim: int = 100,
    seed: int = 0,
    gen_hidden: tuple[int, int] = (64, 64),
    disc_hidden: tuple[int, int, int] = (64, 64, 32),
) -> GanModel:
    """Three dense generator layers and four dense discriminator layers."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    gen = init_mlp([noise_dim, *gen_hidden, feature_dim], ["relu", "relu", "identity"], rng)
    disc = init_mlp([feature_dim, *disc_hidden, 1], ["relu", "relu", "relu", "sigmoid"], rng)
    return GanModel(gen, disc, noise_dim, 0, seed)


def _clamped(d: np.ndarray) -> np.ndarray:
    return np.clip(d, LOG_EPS, 1.0 - LOG_EPS)


def gan_value(d: MlpParams, real_batch, fake_batch) -> float:
    """Empirical value function: mean log D(x) + mean log(1 - D(x_fake))."""
    real_batch = as_dense(real_batch)
    fake_batch = as_dense(fake_batch)
    if real_batch.shape[0] == 0 or fake_batch.shape[0] == 0:
        raise ValueError("gan_value needs nonempty batches")
    d_real = _clamped(mlp_forward(d, real_batch))
    d_fake = _clamped(mlp_forward(d, fake_batch))
    return float(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake)))


def discriminator_objective(model: GanModel, real_batch, noise_batch) -> float:
    fake = mlp_forward(model.generator, noise_batch)
    return gan_value(model.discriminator, real_batch, fake)


def generator_objective(model: GanModel, noise_batch) -> float:
    fake = mlp_forward(model.generator, noise_batch)
    d_fake = _clamped(mlp_forward(model.discriminator, fake))
    return float(np.mean(np.log1p(-d_fake)))


def _dlog(d: np.ndarray, sign: float) -> np.ndarray:
    """d/dD of log(D) (sign=+1) or log(1-D) (sign=-1), zero where the clamp is active."""
    inside = (d > LOG_EPS) & (d < 1.0 - LOG_EPS)
    g = 1.0 / d if sign > 0 else -1.0 / (1.0 - d)
    return np.where(inside, g, 0.0)


def adversarial_gradients(model: GanModel, real_batch, noise_batch) -> tuple[MlpParams, MlpParams]:
    """Analytic gradients of the discriminator and generator minibatch objectives.

    ``grad_d`` is the ascent direction of mean[log D(x) + log(1 - D(G(z)))]
    with respect to the discriminator; ``grad_g`` is the gradient of
    mean log(1 - D(G(z))) with respect to the generator, D held fixed.
    """
    real_batch = as_dense(real_batch, cols=model.feature_dim)
    noise_batch = as_dense(noise_batch, cols=model.noise_dim)
    m = real_batch.shape[0]
    if m < 1 or noise_batch.shape[0] != m:
        raise ShapeError(
            f"real batch {real_batch.shape} and noise batch {noise_batch.shape} must have equal rows >= 1"
        )
    fake, g_cache = mlp_forward(model.generator, noise_batch, keep=True)
    d_real, r_cache = mlp_forward(model.discriminator, real_batch, keep=True)
    d_fake, f_cache = mlp_forward(model.discriminator, fake, keep=True)

    gd_real, _ = mlp_backward(model.discriminator, r_cache, _dlog(d_real, +1) / m)
    gd_fake, dfake_input = mlp_backward(model.discriminator, f_cache, _dlog(d_fake, -1) / m)
    grad_d = MlpParams(
        [
            Layer(a.weights + b.weights, a.bias + b.bias, a.activation)
            for a, b in zip(gd_real.layers, gd_fake.layers)
        ]
    )
    # The generator objective is exactly the fake half of the discriminator objective.
    grad_g, _ = mlp_backward(model.generator, g_cache, dfake_input)
    return grad_d, grad_g


def _step(params: MlpParams, grads: MlpParams, scale: float) -> None:
    for layer, g in zip(params.layers, grads.layers):
        layer.weights += scale * g.weights
        layer.bias += scale * g.bias


@dataclass
class GanConfig:
    noise_dim: int = 100
    iterations: int = 10000
    lr: float = 0.0002
    batch: int = 64
    seed: int = 0
    gen_hidden: tuple[int, int] = (64, 64)
    disc_hidden: tuple[int, int, int] = (64, 64, 32)


def train_gan(real_data, config: GanConfig | None = None) -> GanModel:
    """Alternate one discriminator ascent step and one generator descent step per iteration."""
    config = config or GanConfig()
    real_data = as_dense(real_data)
    if real_data.shape[0] < config.batch or config.batch < 1:
        raise ValueError(
            f"GAN training needs at least batch={config.batch} rows, got {real_data.shape[0]}"
        )
    model = init_gan(
        real_data.shape[1], config.noise_dim, config.seed, config.gen_hidden, config.disc_hidden
    )
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    n = real_data.shape[0]
    for it in range(config.iterations):
        real = real_data[rng.choice(n, size=config.batch, replace=False)]
        noise = rng.standard_normal((config.batch, config.noise_dim))
        grad_d, _ = adversarial_gradients(model, real, noise)
        _step(model.discriminator, grad_d, +config.lr)

        noise = rng.standard_normal((config.batch, config.noise_dim))
        _, grad_g = adversarial_gradients(model, real, noise)
        _step(model.generator, grad_g, -config.lr)
        model.iterations_trained = it + 1
    return model


def generate_synthetic(model: GanModel, n: int, seed: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    noise = rng.standard_normal((n, model.noise_dim))
    if n == 0:
        return np.zeros((0, model.feature_dim))
    return mlp_forward(model.generator, noise)


# Discrete-distribution oracles for the optimal discriminator and JS identity.


@dataclass
class DiscreteDist:
    support: list
    probs: np.ndarray

    def __post_init__(self):
        self.support = [tuple(np.atleast_1d(s).tolist()) if not isinstance(s, tuple) else s for s in self.support]
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.support) != self.probs.size:
            raise ValueError("support and probs lengths differ")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support points must be distinct")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")

    def prob(self, x) -> float:
        key = x if isinstance(x, tuple) else tuple(np.atleast_1d(x).tolist())
        try:
            return float(self.probs[self.support.index(key)])
        except ValueError:
            return 0.0

    def contains(self, x) -> bool:
        key = x if isinstance(x, tuple) else tuple(np.atleast_1d(x).tolist())
        return key in self.support


def _aligned(p: DiscreteDist, q: DiscreteDist) -> tuple[list, np.ndarray, np.ndarray]:
    points = list(dict.fromkeys(p.support + q.support))
    return points, np.array([p.prob(x) for x in points]), np.array([q.prob(x) for x in points])


def optimal_discriminator(p_data: DiscreteDist, p_g: DiscreteDist, x) -> float:
    if not (p_data.contains(x) or p_g.contains(x)):
        raise ValueError(f"{x!r} lies outside both supports")
    pd, pg = p_data.prob(x), p_g.prob(x)
    if pd + pg == 0.0:
        raise ValueError(f"{x!r} has zero mass under both distributions")
    return pd / (pd + pg)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p: DiscreteDist, q: DiscreteDist) -> float:
    """Jensen-Shannon divergence in nats; lies in [0, ln 2]."""
    _, pp, qq = _aligned(p, q)
    m = 0.5 * (pp + qq)
    return 0.5 * _kl(pp, m) + 0.5 * _kl(qq, m)


def optimal_value(p_data: DiscreteDist, p_g: DiscreteDist) -> float:
    """E_pdata[log D*] + E_pg[log(1 - D*)] with 0 * log 0 taken as 0."""
    points, pd, pg = _aligned(p_data, p_g)
    total = 0.0
    for x, a, b in zip(points, pd, pg):
        if a == 0 and b == 0:
            continue
        d = optimal_discriminator(p_data, p_g, x)
        if a > 0:
            total += a * math.log(d)
        if b > 0:
            total += b * math.log1p(-d)
    return total
