"""Deterministic input encodings for the decoders.

Positions get a sinusoidal octave encoding (raw input included); view
directions get the real spherical-harmonics basis up to degree 4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    pe_frequencies: int = 6
    sh_degree: int = 2

    def __post_init__(self):
        if self.pe_frequencies < 0:
            raise ValueError("pe_frequencies must be >= 0")
        if not 0 <= self.sh_degree <= 4:
            raise ValueError("sh_degree must be in [0, 4]")

    @property
    def pe_length(self) -> int:
        return 3 + 6 * self.pe_frequencies

    @property
    def sh_length(self) -> int:
        return (self.sh_degree + 1) ** 2


def positional_encoding(x: np.ndarray, n_frequencies: int) -> np.ndarray:
    """[x || sin(2^j pi x) || cos(2^j pi x)], j = 0..L-1, per octave.

    Output length 3 + 6L along the last axis.
    """
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise ValueError("positional encoding input must be finite")
    parts = [x]
    for j in range(n_frequencies):
        angle = (np.pi * 2.0**j) * x
        parts.append(np.sin(angle))
        parts.append(np.cos(angle))
    return np.concatenate(parts, axis=-1)


# Real spherical harmonics, ordered m = -l..l within each degree; constants are
# the standard orthonormal coefficients (e.g. Y_00 = 0.5*sqrt(1/pi)).
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
       1.0925484305920792, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
       0.3731763325901154, 0.4570457994644658, 1.445305721320277,
       0.5900435899266435)
_C4 = (2.5033429417967046, 1.7701307697799304, 0.9461746957575601,
       0.6690465435572892, 0.10578554691520431, 0.6690465435572892,
       0.47308734787878004, 1.7701307697799304, 0.6258357354491761)


def sh_encoding(d: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values of unit directions, degrees 0..degree.

    Output length (degree+1)^2; each degree block is ordered m = -l..l, so the
    degree-1 block is (y, z, x) up to the common constant.
    """
    d = np.asarray(d)
    single = d.ndim == 1
    dirs = np.atleast_2d(d)
    norms = np.linalg.norm(dirs, axis=1)
    if not np.isfinite(dirs).all() or (np.abs(norms - 1.0) > 1e-6).any():
        raise ValueError("sh_encoding requires unit direction vectors")
    if not 0 <= degree <= 4:
        raise ValueError("sh degree must be in [0, 4]")

    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((dirs.shape[0], (degree + 1) ** 2), dtype=dirs.dtype)
    out[:, 0] = _C0
    if degree >= 1:
        out[:, 1] = _C1 * y
        out[:, 2] = _C1 * z
        out[:, 3] = _C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = _C2[0] * x * y
        out[:, 5] = _C2[1] * y * z
        out[:, 6] = _C2[2] * (3.0 * zz - 1.0)
        out[:, 7] = _C2[3] * x * z
        out[:, 8] = _C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = _C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = _C3[1] * x * y * z
        out[:, 11] = _C3[2] * y * (5.0 * zz - 1.0)
        out[:, 12] = _C3[3] * z * (5.0 * zz - 3.0)
        out[:, 13] = _C3[4] * x * (5.0 * zz - 1.0)
        out[:, 14] = _C3[5] * z * (xx - yy)
        out[:, 15] = _C3[6] * x * (xx - 3.0 * yy)
    if degree >= 4:
        out[:, 16] = _C4[0] * x * y * (xx - yy)
        out[:, 17] = _C4[1] * y * z * (3.0 * xx - yy)
        out[:, 18] = _C4[2] * x * y * (7.0 * zz - 1.0)
        out[:, 19] = _C4[3] * y * z * (7.0 * zz - 3.0)
        out[:, 20] = _C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
        out[:, 21] = _C4[5] * x * z * (7.0 * zz - 3.0)
        out[:, 22] = _C4[6] * (xx - yy) * (7.0 * zz - 1.0)
        out[:, 23] = _C4[7] * x * z * (xx - 3.0 * yy)
        out[:, 24] = _C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out[0] if single else out
