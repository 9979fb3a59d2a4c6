"""Reverse-mode gradients for the fixed render pipeline, plus Adam.

The pipeline is shallow and static, so each stage gets a hand-derived adjoint
(compositing, the two decoders, bilinear/linear grid sampling, the CP product)
instead of a general tape.  Gradients accumulate into per-tensor buffers keyed
by the names from :func:`parameter_map`.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import relu_backward, spatial_backward
from .decoder import DecoderPair, Mlp
from .field import FactorizedField, _grid_coords, _line_coords, sample_line
from .pipeline import ForwardTrace
from .render import suffix_sum_segments


def parameter_map(field: FactorizedField, decoders: DecoderPair) -> dict[str, np.ndarray]:
    """Canonical name -> tensor view of every trainable array (fixed order)."""
    out: dict[str, np.ndarray] = {}
    for gname, grid in (("density", field.density), ("appearance", field.appearance)):
        for k in range(3):
            out[f"{gname}.mat{k}"] = grid.matrices[k]
        for k in range(3):
            out[f"{gname}.vec{k}"] = grid.vectors[k]
    for aname, axes in (("density_params", field.density_params),
                        ("appearance_params", field.appearance_params)):
        for k in range(axes.dims):
            out[f"{aname}.axis{k}"] = axes.vectors[k]
    for mname, mlp in (("density_mlp", decoders.density_mlp),
                       ("color_mlp", decoders.color_mlp)):
        out[f"{mname}.w1"] = mlp.w1
        out[f"{mname}.b1"] = mlp.b1
        out[f"{mname}.w2"] = mlp.w2
        out[f"{mname}.b2"] = mlp.b2
    return out


def zero_gradients(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def accumulate(into: dict[str, np.ndarray], other: dict[str, np.ndarray]) -> None:
    for k, v in other.items():
        into[k] += v


# ---------------------------------------------------------------------------
# adjoints


def _composite_backward(trace: ForwardTrace, grad_rgb: np.ndarray):
    """d(loss)/d(sigma_i), d(loss)/d(color_i) given d(loss)/d(ray rgb)."""
    b = trace.batch
    rid = b.ray_ids
    g_ray = grad_rgb[rid]                                   # (S, 3)
    g_colors = trace.weights[:, None] * g_ray               # (S, 3)
    gw = np.einsum("sc,sc->s", g_ray, trace.rgb_samples)    # (S,)
    g_tfinal = grad_rgb @ trace.background                  # (B,)
    deltas = b.deltas.astype(trace.sigma.dtype)
    a = trace.sigma * deltas
    # d/dA_i of sum_k gw_k w_k + gT T_final, with w_k = T_k (1 - e^{-A_k}):
    #   k = i gives gw_i T_i e^{-A_i}; every k > i and T_final give -(own term)
    suffix = suffix_sum_segments(gw * trace.weights, rid, b.n_rays)
    g_a = gw * trace.trans * np.exp(-a) - suffix - g_tfinal[rid] * trace.t_final[rid]
    g_sigma = g_a * deltas
    return g_sigma, g_colors


def _mlp_backward(mlp: Mlp, x_in: np.ndarray, h: np.ndarray, g_raw: np.ndarray):
    """Adjoint through one hidden layer; h is the stored post-ReLU activation."""
    g_w2 = g_raw.T @ h
    g_b2 = g_raw.sum(axis=0)
    g_h = g_raw @ mlp.w2
    relu_backward(g_h, h)  # in place: zero where the unit was inactive
    g_w1 = g_h.T @ x_in
    g_b1 = g_h.sum(axis=0)
    g_x = g_h @ mlp.w1
    return (g_w1, g_b1, g_w2, g_b2), g_x


def _param_backward(axes, u_par: np.ndarray, g_param: np.ndarray,
                    grads: dict[str, np.ndarray], prefix: str) -> None:
    lines = [sample_line(axes.vectors[k], u_par[:, k]) for k in range(axes.dims)]
    for k in range(axes.dims):
        other = g_param
        for j in range(axes.dims):
            if j != k:
                other = other * lines[j]
        vec = axes.vectors[k]
        i0, f = _line_coords(u_par[:, k], vec.shape[1])
        f = f.astype(vec.dtype)
        idx = np.concatenate([i0, i0 + 1])
        vals = np.concatenate([other * (1 - f)[:, None], other * f[:, None]])
        out = grads[f"{prefix}.axis{k}"]
        for ch in range(vec.shape[0]):
            out[ch] += np.bincount(idx, weights=vals[:, ch],
                                   minlength=vec.shape[1]).astype(vec.dtype)


def backward(field: FactorizedField, decoders: DecoderPair, trace: ForwardTrace,
             grad_rgb: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable tensor.

    ``grad_rgb`` is d(loss)/d(composited rgb), shape (n_rays, 3).  Regularizer
    adjoints (L1/TV) act on the weights directly and are added by the caller.
    """
    if not np.isfinite(grad_rgb).all():
        raise FloatingPointError("non-finite color gradient entering backward")
    grads = zero_gradients(parameter_map(field, decoders))
    b = trace.batch
    if b.n_samples == 0:
        return grads
    dtype = field.dtype

    g_sigma, g_colors = _composite_backward(trace, grad_rgb.astype(dtype))

    # heads: softplus' = sigmoid(raw) = 1 - exp(-sigma); sigmoid' = y(1-y)
    g_raw_d = (g_sigma * (-np.expm1(-trace.sigma)))[:, None]
    g_raw_c = g_colors * trace.rgb_samples
    g_raw_c *= 1 - trace.rgb_samples

    (gw1, gb1, gw2, gb2), g_x_d = _mlp_backward(decoders.density_mlp, trace.x_in_d,
                                                trace.h_d, g_raw_d)
    grads["density_mlp.w1"] += gw1
    grads["density_mlp.b1"] += gb1
    grads["density_mlp.w2"] += gw2
    grads["density_mlp.b2"] += gb2
    (gw1, gb1, gw2, gb2), g_x_c = _mlp_backward(decoders.color_mlp, trace.x_in_c,
                                                trace.h_c, g_raw_c)
    grads["color_mlp.w1"] += gw1
    grads["color_mlp.b1"] += gb1
    grads["color_mlp.w2"] += gw2
    grads["color_mlp.b2"] += gb2

    u_sp = _grid_coords(field.density, trace.x_norm)
    r_d = trace.spatial_rank["density"]
    r_c = trace.spatial_rank["appearance"]
    rp = field.density_params.rank if field.param_dims else 0

    spatial_backward(field.density.matrices, field.density.vectors, u_sp,
                     np.ascontiguousarray(g_x_d[:, :3 * r_d]),
                     [grads[f"density.mat{k}"] for k in range(3)],
                     [grads[f"density.vec{k}"] for k in range(3)])
    spatial_backward(field.appearance.matrices, field.appearance.vectors, u_sp,
                     np.ascontiguousarray(g_x_c[:, :3 * r_c]),
                     [grads[f"appearance.mat{k}"] for k in range(3)],
                     [grads[f"appearance.vec{k}"] for k in range(3)])

    if field.param_dims:
        _param_backward(field.density_params, trace.u_params,
                        g_x_d[:, 3 * r_d:3 * r_d + rp], grads, "density_params")
        _param_backward(field.appearance_params, trace.u_params,
                        g_x_c[:, 3 * r_c:3 * r_c + rp], grads, "appearance_params")
    # encoding tails carry no trainable weights
    return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair of buffers per tensor."""

    m: dict[str, np.ndarray] = dc_field(default_factory=dict)
    v: dict[str, np.ndarray] = dc_field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @staticmethod
    def for_params(params: dict[str, np.ndarray], beta1: float = 0.9,
                   beta2: float = 0.99, eps: float = 1e-8) -> "AdamState":
        return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                         v={k: np.zeros_like(p) for k, p in params.items()},
                         step=0, beta1=beta1, beta2=beta2, eps=eps)

    def reset_tensor(self, name: str, like: np.ndarray) -> None:
        self.m[name] = np.zeros_like(like)
        self.v[name] = np.zeros_like(like)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr) -> AdamState:
    """In-place bias-corrected Adam update; ``lr`` is a scalar or name->scalar."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
        step_lr = lr[name] if isinstance(lr, dict) else lr
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
