import numpy as np
import pytest

from fedbag.model import ModelDims, init_weights
from fedbag.serialization import (
    BagFormatError,
    NonFiniteBagError,
    load_bag,
    load_checkpoint,
    save_bag,
    save_checkpoint,
)


def test_bag_round_trip_is_bit_exact(tmp_path):
    bag = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    save_bag(bag, tmp_path / "b.bin")
    out = load_bag(tmp_path / "b.bin")
    assert out.tobytes() == bag.tobytes()


def test_truncated_bag_names_the_file(tmp_path):
    p = tmp_path / "b.bin"
    save_bag(np.ones((4, 3), dtype=np.float32), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(BagFormatError, match="b.bin"):
        load_bag(p)
    p.write_bytes(b"junk")
    with pytest.raises(BagFormatError, match="b.bin"):
        load_bag(p)


def test_nan_payload_and_missing_file(tmp_path):
    p = tmp_path / "nan.bin"
    save_bag(np.array([[1.0, np.nan]], dtype=np.float32), p)
    with pytest.raises(NonFiniteBagError, match="nan.bin"):
        load_bag(p)
    with pytest.raises(FileNotFoundError):
        load_bag(tmp_path / "absent.bin")


@pytest.mark.parametrize("version", [1, 2])
def test_checkpoint_round_trip(tmp_path, version):
    w = init_weights(ModelDims(d_in=6, d_proj=5, d_attn=4, n_out=2), seed=1)
    if version == 1:
        w = {k: v.astype(np.float32).astype(np.float64) for k, v in w.items()}
    save_checkpoint(tmp_path / "c.fbag", w, version=version)
    out, state = load_checkpoint(tmp_path / "c.fbag")
    assert state is None and list(out) == list(w)
    for k in w:
        assert out[k].tobytes() == w[k].tobytes()


def test_checkpoint_corruption_detected(tmp_path):
    w = init_weights(ModelDims(d_in=3, d_proj=2, d_attn=2, n_out=2))
    p = tmp_path / "c.fbag"
    save_checkpoint(p, w)
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="c.fbag"):
        load_checkpoint(p)
    p.write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="c.fbag"):
        load_checkpoint(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="c.fbag"):
        load_checkpoint(p)
