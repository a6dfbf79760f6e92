import numpy as np
import pytest

from mmmae import checkpoint
from mmmae.errors import FormatError


def sample_payload():
    rng = np.random.default_rng(0)
    tensors = {
        "model.encoder.blocks.0.attn.qkv.weight": rng.normal(size=(12, 4)).astype(np.float32),
        "model.patchify_rgb.proj.bias": rng.normal(size=8).astype(np.float32),
        "opt.m.model.patchify_rgb.proj.bias": np.zeros(8, dtype=np.float32),
        "counts": np.arange(3, dtype=np.int64),
    }
    meta = {"step": 7, "seed": 3, "config": "a=1\nb=2\n", "format": "trainer-state"}
    return tensors, meta


class TestRoundTrip:
    def test_tensors_and_meta_survive(self, tmp_path):
        tensors, meta = sample_payload()
        path = tmp_path / "ck.bin"
        checkpoint.save(path, tensors, meta)
        loaded, meta2 = checkpoint.load(path)
        assert meta2 == meta
        assert set(loaded) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(loaded[k], tensors[k])
            assert loaded[k].dtype == tensors[k].dtype

    def test_save_load_save_is_byte_identical(self, tmp_path):
        tensors, meta = sample_payload()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        checkpoint.save(p1, tensors, meta)
        loaded, meta2 = checkpoint.load(p1)
        checkpoint.save(p2, loaded, meta2)
        assert p1.read_bytes() == p2.read_bytes()


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            checkpoint.load(p)

    def test_wrong_version(self, tmp_path):
        tensors, meta = sample_payload()
        p = tmp_path / "x.bin"
        checkpoint.save(p, tensors, meta)
        blob = bytearray(p.read_bytes())
        blob[4] = 99
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            checkpoint.load(p)

    @pytest.mark.parametrize("keep", [3, 10, 45, 120])
    def test_truncation_is_format_error(self, tmp_path, keep):
        tensors, meta = sample_payload()
        p = tmp_path / "x.bin"
        checkpoint.save(p, tensors, meta)
        (tmp_path / "t.bin").write_bytes(p.read_bytes()[:keep])
        with pytest.raises(FormatError):
            checkpoint.load(tmp_path / "t.bin")

    def test_digest_mismatch_detected(self, tmp_path):
        tensors, meta = sample_payload()
        p = tmp_path / "x.bin"
        checkpoint.save(p, tensors, meta)
        blob = bytearray(p.read_bytes())
        blob[9] ^= 0xFF  # inside the stored config digest
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="digest"):
            checkpoint.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            checkpoint.load(tmp_path / "absent.bin")
