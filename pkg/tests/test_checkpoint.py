import numpy as np
import pytest

from dynint import checkpoint, train
from dynint.checkpoint import CheckpointError, load_model, save_model
from dynint.dataio import Dataset
from dynint.model import DynIntModel, TrainConfig
from dynint.ndcore import make_rng
from dynint.optim import Adam, Ftrl, GroupFtrl

CARDS = (6, 4, 5)


def _trained(variant):
    rng = make_rng(0)
    X = np.stack([rng.integers(0, c, size=256) for c in CARDS], axis=1)
    ds = Dataset(X, rng.integers(0, 2, size=256), CARDS)
    model = DynIntModel(TrainConfig(variant=variant, embed_dim=4, batch_size=32), CARDS)
    opts = train.make_optimizers(model)
    for s in range(0, 256, 32):
        train.train_step(model, opts, X[s:s + 32], ds.y[s:s + 32])
    return model, opts, ds


@pytest.mark.parametrize("variant", ["pin", "da", "dgp", "dwp"])
def test_round_trip_metrics_bitwise(tmp_path, variant):
    model, opts, ds = _trained(variant)
    save_model(tmp_path / "m.ckpt", model, opts, {"step": 8})
    back, state, meta = load_model(tmp_path / "m.ckpt", CARDS)
    assert meta["step"] == 8
    assert train.evaluate(back, ds) == train.evaluate(model, ds)
    for name, p in model.params.items():
        np.testing.assert_array_equal(back.params[name], p)


def test_optimizer_state_resumes_exactly(tmp_path):
    model, opts, ds = _trained("da")
    save_model(tmp_path / "m.ckpt", model, opts)
    back, state, _ = load_model(tmp_path / "m.ckpt")
    new_opts = train.make_optimizers(back)
    for name, opt in new_opts.items():
        opt.load_state(state[name])
    for a, b in ((model, opts), (back, new_opts)):
        train.train_step(a, b, ds.X[:32], ds.y[:32])
    for name, p in model.params.items():
        np.testing.assert_array_equal(back.params[name], p)
    assert isinstance(opts["embed.0"], GroupFtrl) and isinstance(opts["out.b"], Ftrl)
    assert any(isinstance(o, Adam) for o in opts.values())


def test_byte_layout_is_deterministic(tmp_path):
    model, opts, _ = _trained("pin")
    save_model(tmp_path / "a", model, opts)
    save_model(tmp_path / "b", model, opts)
    raw = (tmp_path / "a").read_bytes()
    assert raw == (tmp_path / "b").read_bytes()
    assert raw[:4] == b"DYNC"


def test_errors(tmp_path):
    (tmp_path / "junk").write_bytes(b"XXXX0000")
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "junk")
    model, _, _ = _trained("pin")
    save_model(tmp_path / "m", model)
    with pytest.raises(CheckpointError, match="cardinalities"):
        load_model(tmp_path / "m", (6, 4, 9))
    blocks, meta = checkpoint.read_blocks(tmp_path / "m")
    del blocks["out.W"]
    checkpoint.write_blocks(tmp_path / "cut", blocks, meta)
    with pytest.raises(CheckpointError, match="out.W"):
        load_model(tmp_path / "cut")
