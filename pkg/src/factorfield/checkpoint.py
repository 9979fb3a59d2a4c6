"""Bit-exact single-file serialization of a trained model (.vsnf).

Layout: magic ``VSNF`` | u32 version | u64 header length | JSON header |
little-endian float32 tensor payload in header-declared order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .decoder import DecoderPair, Mlp
from .encoding import EncodingConfig
from .field import Aabb, FactorizedField, FactorizedGrid, ParameterAxes, count_parameters
from .grad import parameter_map

MAGIC = b"VSNF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _header(field: FactorizedField, decoders: DecoderPair, meta: dict,
            tensors: dict[str, np.ndarray]) -> dict:
    mlp_count = sum(v.size for k, v in tensors.items() if k.endswith(("w1", "b1", "w2", "b2")))
    return {
        "version": VERSION,
        "resolution": [int(n) for n in field.density.resolution],
        "rank_density": field.density.rank,
        "rank_appearance": field.appearance.rank,
        "rank_param": field.density_params.rank if field.param_dims else 0,
        "param_dims": field.param_dims,
        "param_sizes": list(field.density_params.sizes),
        "param_ranges": [[lo, hi] for lo, hi in field.param_ranges],
        "aabb": field.aabb.to_dict(),
        "encoding": {"pe_frequencies": decoders.encoding.pe_frequencies,
                     "sh_degree": decoders.encoding.sh_degree},
        "hidden_width": decoders.density_mlp.hidden_width,
        "parameter_count": count_parameters(field) + mlp_count,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "meta": meta,
    }


def save(field: FactorizedField, decoders: DecoderPair, meta: dict, path) -> None:
    field.validate()
    decoders.validate()
    tensors = parameter_map(field, decoders)
    header = json.dumps(_header(field, decoders, meta or {}, tensors),
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load(path) -> tuple[FactorizedField, DecoderPair, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}; not a VSNF checkpoint")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc

    payload = raw[16 + hlen:]
    offset = 0
    tensors: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"truncated payload at tensor {spec['name']}")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4").reshape(shape)
        tensors[spec["name"]] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("payload longer than header declares")

    res = tuple(header["resolution"])
    k = header["param_dims"]
    ranges = [(float(lo), float(hi)) for lo, hi in header["param_ranges"]]

    def grid(prefix: str) -> FactorizedGrid:
        g = FactorizedGrid(res,
                           [tensors[f"{prefix}.mat{i}"] for i in range(3)],
                           [tensors[f"{prefix}.vec{i}"] for i in range(3)])
        g.validate()
        return g

    def axes(prefix: str) -> ParameterAxes:
        a = ParameterAxes(ranges, [tensors[f"{prefix}.axis{i}"] for i in range(k)])
        if k:
            a.validate()
        return a

    field = FactorizedField(
        density=grid("density"), appearance=grid("appearance"),
        density_params=axes("density_params"), appearance_params=axes("appearance_params"),
        aabb=Aabb.from_dict(header["aabb"]),
    )
    enc = EncodingConfig(**header["encoding"])
    decoders = DecoderPair(
        density_mlp=Mlp(tensors["density_mlp.w1"], tensors["density_mlp.b1"],
                        tensors["density_mlp.w2"], tensors["density_mlp.b2"]),
        color_mlp=Mlp(tensors["color_mlp.w1"], tensors["color_mlp.b1"],
                      tensors["color_mlp.w2"], tensors["color_mlp.b2"]),
        encoding=enc,
    )
    try:
        field.validate()
        decoders.validate()
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint state: {exc}") from exc
    mlp_count = sum(tensors[k].size for k in tensors if k.startswith(("density_mlp", "color_mlp")))
    if header["parameter_count"] != count_parameters(field) + mlp_count:
        raise CheckpointError("header parameter_count disagrees with payload")
    return field, decoders, header["meta"]
