"""Small differentiable denoisers with capacity knobs, plus their optimizer.

The denoiser is an MLP over flattened inputs with SiLU activations. The
timestep enters as t/T concatenated with a fixed 8-dimensional sinusoidal
embedding (four sin/cos pairs at dyadic frequencies); the embedding has no
trainable parameters. Hidden activations are exposed as the feature taps for
feature-level distillation.

``forward(x, t)`` records onto the autodiff tape and returns the prediction
and feature Vars; calling the model directly (``model(x, t)``) is the
tape-free inference path the samplers and the frozen teacher use. Gradients
for all parameters come from :func:`liftplace.autodiff.backward` on any loss
built from the forward outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .numerics import Rng

__all__ = ["MLPDenoiser", "LinearMap", "AdamState", "adam_step", "save_checkpoint", "load_checkpoint"]

EMB_DIM = 8  # sinusoidal part of the timestep features


def _t_features(t, batch: int, total_steps: int) -> np.ndarray:
    """(batch, 1 + EMB_DIM) timestep features for scalar or per-row t."""
    tn = np.asarray(t, dtype=np.float64) / float(total_steps)
    if tn.ndim == 0:
        tn = np.full(batch, float(tn))
    elif tn.shape != (batch,):
        raise ValueError(f"t must be a scalar or shape ({batch},), got {tn.shape}")
    cols = [tn]
    for j in range(EMB_DIM // 2):
        ang = np.pi * (2.0**j) * tn
        cols.append(np.sin(ang))
        cols.append(np.cos(ang))
    return np.stack(cols, axis=1)


class MLPDenoiser:
    """MLP noise predictor: data_dim + 9 timestep features -> widths -> data_dim."""

    def __init__(self, data_dim: int, widths: list[int], total_steps: int, rng: Rng):
        if data_dim < 1 or any(w < 1 for w in widths):
            raise ValueError("data_dim and all widths must be >= 1")
        self.data_dim = int(data_dim)
        self.widths = [int(w) for w in widths]
        self.total_steps = int(total_steps)
        self.weights: list[Var] = []
        self.biases: list[Var] = []
        fan_in = self.data_dim + 1 + EMB_DIM
        for fan_out in self.widths + [self.data_dim]:
            # Kaiming-uniform fan-in scaling; biases start at zero.
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(Var(rng.uniform(-bound, bound, (fan_in, fan_out))))
            self.biases.append(Var(np.zeros(fan_out)))
            fan_in = fan_out

    @property
    def param_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self) -> list[Var]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def feature_dims(self) -> list[int]:
        return list(self.widths)

    def forward(self, x, t, record: bool = True):
        """Noise prediction plus every hidden activation.

        x has shape (..., data_dim); leading axes are flattened into a batch
        for the matmuls and restored on the output. With ``record`` the
        returned prediction/features are Vars carrying the tape; without it
        they are plain arrays.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.data_dim:
            raise ValueError(f"input last dim {x.shape[-1]} != data_dim {self.data_dim}")
        lead = x.shape[:-1]
        batch = int(np.prod(lead)) if lead else 1
        h = np.concatenate([x.reshape(batch, self.data_dim), _t_features(t, batch, self.total_steps)], axis=1)
        features = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wv = w if record else w.value
            bv = b if record else b.value
            h = h @ wv + bv
            if i < len(self.widths):
                h = ad.silu(h)
                features.append(h)
        out = h.reshape(lead + (self.data_dim,)) if lead else h.reshape(self.data_dim)
        return out, features

    def __call__(self, x, t) -> np.ndarray:
        return self.forward(x, t, record=False)[0]


class LinearMap:
    """Trainable affine map from student feature dim to teacher feature dim."""

    def __init__(self, matrix, bias):
        self.matrix = matrix if isinstance(matrix, Var) else Var(matrix)  # (out, in)
        self.bias = bias if isinstance(bias, Var) else Var(bias)  # (out,)
        if self.matrix.value.ndim != 2 or self.bias.value.shape != (self.matrix.value.shape[0],):
            raise ValueError("matrix must be (out_dim, in_dim) with matching bias")

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> "LinearMap":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    @classmethod
    def init(cls, rng: Rng, out_dim: int, in_dim: int) -> "LinearMap":
        bound = np.sqrt(6.0 / in_dim)
        return cls(rng.uniform(-bound, bound, (out_dim, in_dim)), np.zeros(out_dim))

    @property
    def out_dim(self) -> int:
        return self.matrix.value.shape[0]

    @property
    def in_dim(self) -> int:
        return self.matrix.value.shape[1]

    def parameters(self) -> list[Var]:
        return [self.matrix, self.bias]

    def apply(self, f):
        """Map (..., in_dim) features to (..., out_dim)."""
        shape = f.shape if hasattr(f, "shape") else np.shape(f)
        if shape[-1] != self.in_dim:
            raise ValueError(f"feature dim {shape[-1]} != regressor in_dim {self.in_dim}")
        lead = tuple(shape[:-1])
        batch = int(np.prod(lead)) if lead else 1
        flat = f.reshape((batch, self.in_dim))
        mapped = flat @ self.matrix.T + self.bias
        return mapped.reshape(lead + (self.out_dim,)) if lead else mapped.reshape((self.out_dim,))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Var]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.value) for p in params],
            v=[np.zeros_like(p.value) for p in params],
        )


def adam_step(
    params: list[Var],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with the standard bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.value.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: MLPDenoiser, path, *, seed_provenance=None) -> None:
    """JSON checkpoint: widths, seed provenance, flat per-layer parameters."""
    payload = {
        "data_dim": model.data_dim,
        "widths": model.widths,
        "total_steps": model.total_steps,
        "seed_provenance": seed_provenance,
        "layers": [
            {
                "weight_shape": list(w.value.shape),
                "weight": w.value.ravel().tolist(),
                "bias": b.value.tolist(),
            }
            for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> MLPDenoiser:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    model = MLPDenoiser(obj["data_dim"], obj["widths"], obj["total_steps"], Rng(0))
    if len(obj["layers"]) != len(model.weights):
        raise ValueError("checkpoint layer count does not match widths")
    for layer, w, b in zip(obj["layers"], model.weights, model.biases):
        shape = tuple(layer["weight_shape"])
        if shape != w.value.shape:
            raise ValueError(f"checkpoint weight shape {shape} != expected {w.value.shape}")
        w.value = np.asarray(layer["weight"], dtype=np.float64).reshape(shape)
        b.value = np.asarray(layer["bias"], dtype=np.float64)
    return model
