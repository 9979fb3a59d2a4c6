"""One-hidden-layer MLP decoders for density and view-dependent color."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import bias_relu
from .encoding import EncodingConfig
from .field import FactorizedField


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(x.dtype.type(0), x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Mlp:
    """ReLU perceptron with a single hidden layer."""

    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)

    @property
    def in_width(self) -> int:
        return self.w1.shape[1]

    @property
    def out_width(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    def validate(self) -> None:
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[1] != self.w1.shape[0] \
                or self.w2.shape[0] != self.b2.shape[0]:
            raise ValueError("inconsistent MLP shapes")
        for t in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(t).all():
                raise ValueError("MLP weights must be finite")

    def forward(self, x: np.ndarray, return_hidden: bool = False):
        """Raw (pre-activation) outputs; x is (S, in).

        With ``return_hidden`` the post-ReLU hidden activations come back too
        (they are all the backward pass needs).
        """
        if x.shape[-1] != self.in_width:
            raise ValueError(f"decoder expects input width {self.in_width}, got {x.shape[-1]}")
        h = x @ self.w1.T
        bias_relu(h, self.b1)
        raw = h @ self.w2.T
        raw += self.b2
        if return_hidden:
            return raw, h
        return raw

    def copy(self) -> "Mlp":
        return Mlp(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def astype(self, dtype) -> "Mlp":
        return Mlp(self.w1.astype(dtype), self.b1.astype(dtype),
                   self.w2.astype(dtype), self.b2.astype(dtype))


@dataclass
class DecoderPair:
    """Density and color decoders plus their input encodings."""

    density_mlp: Mlp
    color_mlp: Mlp
    encoding: EncodingConfig

    def validate(self) -> None:
        self.density_mlp.validate()
        self.color_mlp.validate()
        if self.density_mlp.out_width != 1 or self.color_mlp.out_width != 3:
            raise ValueError("density head is scalar, color head is rgb")

    def copy(self) -> "DecoderPair":
        return DecoderPair(self.density_mlp.copy(), self.color_mlp.copy(), self.encoding)

    def astype(self, dtype) -> "DecoderPair":
        return DecoderPair(self.density_mlp.astype(dtype), self.color_mlp.astype(dtype),
                           self.encoding)


def _init_mlp(in_width: int, hidden: int, out_width: int, rng: np.random.Generator,
              out_bias: float, dtype) -> Mlp:
    # Kaiming-style uniform, bound sqrt(6 / fan_in)
    b_in = np.sqrt(6.0 / in_width)
    b_hid = np.sqrt(6.0 / hidden)
    m = Mlp(
        w1=rng.uniform(-b_in, b_in, size=(hidden, in_width)).astype(dtype),
        b1=np.zeros(hidden, dtype=dtype),
        w2=rng.uniform(-b_hid, b_hid, size=(out_width, hidden)).astype(dtype),
        b2=np.full(out_width, out_bias, dtype=dtype),
    )
    m.validate()
    return m


def fresh_decoders(field: FactorizedField, encoding: EncodingConfig, hidden_width: int,
                   rng: np.random.Generator, density_bias: float = -5.0,
                   dtype=np.float32) -> DecoderPair:
    """New decoders sized for the field; density head starts near-empty."""
    in_d = field.feature_length("density") + encoding.pe_length
    in_c = field.feature_length("appearance") + encoding.sh_length
    pair = DecoderPair(
        density_mlp=_init_mlp(in_d, hidden_width, 1, rng, density_bias, dtype),
        color_mlp=_init_mlp(in_c, hidden_width, 3, rng, 0.0, dtype),
        encoding=encoding,
    )
    pair.validate()
    return pair


def decode_density(pair: DecoderPair, f_sigma: np.ndarray, pe: np.ndarray) -> np.ndarray:
    """Extinction values (softplus of the raw head), shape (S,)."""
    x = np.concatenate([np.atleast_2d(f_sigma), np.atleast_2d(pe)], axis=1)
    raw = pair.density_mlp.forward(x)
    sigma = softplus(raw[:, 0])
    return sigma[0] if np.asarray(f_sigma).ndim == 1 else sigma


def decode_color(pair: DecoderPair, f_c: np.ndarray, sh: np.ndarray) -> np.ndarray:
    """RGB in (0,1)^3 (sigmoid of the raw head), shape (S, 3)."""
    x = np.concatenate([np.atleast_2d(f_c), np.atleast_2d(sh)], axis=1)
    raw = pair.color_mlp.forward(x)
    rgb = sigmoid(raw)
    return rgb[0] if np.asarray(f_c).ndim == 1 else rgb
