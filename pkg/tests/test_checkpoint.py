import numpy as np
import pytest

import factorfield as ff
from factorfield import checkpoint as ckpt
from factorfield.dataset import pose_from_azel

from conftest import make_decoders, make_field


@pytest.fixture
def model32(rng):
    field = make_field(rng, dtype=np.float32)
    decoders = make_decoders(field, rng, dtype=np.float32)
    return field, decoders


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, model32, tmp_path):
        field, dec = model32
        meta = {"note": "test", "width": 32}
        p1 = tmp_path / "a.vsnf"
        p2 = tmp_path / "b.vsnf"
        ckpt.save(field, dec, meta, p1)
        f2, d2, m2 = ckpt.load(p1)
        assert m2 == meta
        ckpt.save(f2, d2, m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_state_renders_bitwise_identically(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        f2, d2, _ = ckpt.load(path)
        cam = ff.Camera(pose_from_azel(25, -10, 3.0), 30.0, 16, 16)
        cfg = ff.RenderConfig(n_samples=24, jitter=False)
        a = ff.render_image(field, dec, cam, [0.4], cfg)
        b = ff.render_image(f2, d2, cam, [0.4], cfg)
        assert np.array_equal(a, b)

    def test_header_parameter_audit(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        import json
        import struct
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen])
        mlp = sum(t.size for t in (dec.density_mlp.w1, dec.density_mlp.b1,
                                   dec.density_mlp.w2, dec.density_mlp.b2,
                                   dec.color_mlp.w1, dec.color_mlp.b1,
                                   dec.color_mlp.w2, dec.color_mlp.b2))
        assert header["parameter_count"] == ff.count_parameters(field) + mlp


class TestCorruption:
    def test_bad_magic_rejected(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(ckpt.CheckpointError, match="magic"):
            ckpt.load(path)

    def test_bad_version_rejected(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(ckpt.CheckpointError, match="version"):
            ckpt.load(path)

    def test_truncated_payload_rejected(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        data = path.read_bytes()
        path.write_bytes(data[:-64])
        with pytest.raises(ckpt.CheckpointError, match="truncated"):
            ckpt.load(path)

    def test_trailing_garbage_rejected(self, model32, tmp_path):
        field, dec = model32
        path = tmp_path / "m.vsnf"
        ckpt.save(field, dec, {}, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 32)
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load(path)
