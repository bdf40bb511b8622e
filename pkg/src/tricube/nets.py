"""Fully-connected networks with explicit forward/backward passes.

No autodiff framework: the policy and value trunks are small ELU MLPs, so
the gradients are written out by hand and verified against finite
differences in the test suite.  Parameters are plain numpy arrays, which
keeps checkpoints a flat list of raw little-endian tensors and makes
training bit-reproducible.

Initialization is orthogonal (QR of a keyed Gaussian draw) with gain
sqrt(2) for hidden layers; output layers take an explicit ``final_gain``
(small for the policy head so early torques stay near zero).
"""

from __future__ import annotations

import numpy as np

from . import rng


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(x))


def elu_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d elu/dx given input x and output y (= elu(x))."""
    return np.where(x > 0.0, 1.0, y + 1.0)


def orthogonal_init(shape: tuple, key: np.ndarray, gain: float, dtype) -> np.ndarray:
    rows, cols = shape
    z = rng.normal(key, rows * cols).reshape(max(rows, cols), min(rows, cols))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))  # fix the sign convention
    if rows < cols:
        q = q.T
    # LAPACK hands back F-ordered data; normalize to C order
    return np.ascontiguousarray(gain * q[:rows, :cols], dtype=dtype)


class MLP:
    """ELU MLP with a linear output layer.

    Parameters live in ``self.weights`` / ``self.biases`` (lists, input to
    output).  ``forward`` returns the output plus a cache consumed by
    ``backward``, which accumulates parameter gradients and returns the
    gradient w.r.t. the input.
    """

    def __init__(
        self,
        sizes: list[int],
        seed_words: tuple = (0,),
        final_gain: float = 1.0,
        dtype=np.float32,
    ):
        self.sizes = list(sizes)
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        n_layers = len(sizes) - 1
        for li in range(n_layers):
            gain = final_gain if li == n_layers - 1 else np.sqrt(2.0)
            key = rng.stream_key(*seed_words, li, rng.CH_PARAM_INIT)
            w = orthogonal_init((sizes[li + 1], sizes[li]), key, gain, self.dtype)
            self.weights.append(w)
            self.biases.append(np.zeros(sizes[li + 1], dtype=self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.ascontiguousarray(x, dtype=self.dtype)
        cache = []
        h = x
        for li in range(self.n_layers):
            z = h @ self.weights[li].T + self.biases[li]
            if li < self.n_layers - 1:
                a = elu(z)
                cache.append((h, z, a))
                h = a
            else:
                cache.append((h, z, z))
                h = z
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given d loss / d output.

        Returns (param_grads ordered like ``parameters()``, d loss / d input).
        """
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        delta = np.ascontiguousarray(dout, dtype=self.dtype)
        for li in reversed(range(self.n_layers)):
            h, z, a = cache[li]
            if li < self.n_layers - 1:
                delta = delta * elu_grad(z, a)
            grads_w[li] = delta.T @ h
            grads_b[li] = delta.sum(axis=0)
            if li > 0:
                delta = delta @ self.weights[li]
        dx = delta @ self.weights[0] if self.n_layers > 0 else delta
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend([gw, gb])
        return grads, dx


class RunningNorm:
    """Streaming per-dimension mean/variance (Welford batch merge) used to
    normalize observations and value targets during training."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.count = 1e-4
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros(dim, dtype=np.float64)
        self.clip = clip

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.shape[0])
        n = x.shape[0]
        if n == 0:
            return
        batch_mean = x.mean(axis=0)
        batch_m2 = ((x - batch_mean) ** 2).sum(axis=0)
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean += delta * (n / total)
        self.m2 += batch_m2 + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-8))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x) - self.mean) / self.std
        return np.clip(z, -self.clip, self.clip)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.std + self.mean

    def state_tensors(self, prefix: str) -> dict:
        return {
            f"{prefix}.count": np.array([self.count], dtype=np.float64),
            f"{prefix}.mean": self.mean,
            f"{prefix}.m2": self.m2,
        }

    def load_state_tensors(self, prefix: str, tensors: dict) -> None:
        self.count = float(tensors[f"{prefix}.count"][0])
        self.mean[:] = tensors[f"{prefix}.mean"]
        self.m2[:] = tensors[f"{prefix}.m2"]


class Adam:
    """Standard first-order adaptive-moment optimizer over a parameter list."""

    def __init__(self, params: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)

    def state_tensors(self, prefix: str) -> dict:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_state_tensors(self, prefix: str, tensors: dict) -> None:
        self.t = int(tensors[f"{prefix}.t"][0])
        for i in range(len(self.m)):
            self.m[i][:] = tensors[f"{prefix}.m{i}"]
            self.v[i][:] = tensors[f"{prefix}.v{i}"]
