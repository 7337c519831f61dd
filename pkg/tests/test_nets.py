import json

import numpy as np
import pytest

from aasenh import tensor as tt
from aasenh.ctc import CTCLoss
from aasenh.nets import (
    AcousticModel, AcousticModelCfg, ConvCfg, Enhancer, NetConfig, RecurrentCfg, init_params, lstm_param_count,
    recurrent_param_count, reverse_index,
)
from aasenh.tensor import ShapeError, Tensor, default_dtype, gradcheck, no_grad


def _x(T, B=2, F=40, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(T, B, F)).astype(np.float32))


def _tiny_am():
    return AcousticModelCfg(n_in=3, conv=[ConvCfg(3, 2, 2)], lstm_units=[2], n_out=3)


@pytest.mark.parametrize("T", [1, 7, 200])
def test_enhancer_shape(T):
    e = Enhancer(RecurrentCfg(units=8), seed=0)
    assert e(_x(T)).shape == (T, 2, 40)


def test_zero_weight_enhancer_is_identity():
    e = Enhancer(RecurrentCfg(units=8)).zero_weights()
    x = _x(13)
    assert np.array_equal(e(x).data, x.data)


def test_enhancer_rejects_wrong_features():
    with pytest.raises(ShapeError):
        Enhancer(RecurrentCfg(units=4))(_x(5, F=39))


def test_am_rows_are_log_distributions():
    am = AcousticModel(AcousticModelCfg(lstm_units=[8, 8]), seed=1)
    logp, lengths = am(_x(10), [10, 10])
    assert logp.shape == (5, 2, 7) and lengths == [5, 5]
    assert np.allclose(np.log(np.exp(logp.data.astype(np.float64)).sum(-1)), 0, atol=1e-5)


def test_am_out_length():
    cfg = AcousticModelCfg()
    assert [cfg.out_length(n) for n in (10, 11, 1)] == [5, 6, 1]
    assert cfg.downsample == 2


def test_am_rejects_bad_stride():
    with pytest.raises(ValueError):
        AcousticModelCfg(conv=[ConvCfg(5, 0, 4)])


def test_am_single_frame_eval():
    am = AcousticModel(AcousticModelCfg(lstm_units=[4]), seed=2).eval()
    logp, lengths = am(_x(1, B=1), [1])
    assert logp.shape == (1, 1, 7) and lengths == [1]


def test_ctc_through_am_gradcheck():
    with default_dtype(np.float64):
        am = AcousticModel(_tiny_am(), seed=5)
        x = Tensor(np.random.default_rng(6).normal(size=(8, 2, 3)), requires_grad=True)
        ctc = CTCLoss()

        def loss():
            logp, lengths = am(x, [8, 6])
            return ctc(logp, [[1, 2], [2]], lengths)

        assert gradcheck(loss, [x, *am.parameters()]) < 1e-4


def test_gradient_reaches_enhancer_through_frozen_am():
    am = AcousticModel(AcousticModelCfg(lstm_units=[8]), seed=0).eval().freeze()
    e = Enhancer(RecurrentCfg(units=4, layers=1), seed=1)
    logp, lengths = am(e(_x(12)), [12, 12])
    CTCLoss()(logp, [[1, 2], [3]], lengths).backward()
    assert all(p.grad is None for p in am.parameters())
    assert sum(float(np.abs(p.grad).sum()) for p in e.parameters()) > 0


def test_init_statistics():
    e = Enhancer(RecurrentCfg(layers=2, units=64), seed=0)
    w = np.concatenate([p.data.ravel() for k, p in e.params.items() if not k.endswith(".b")])
    assert w.size >= 10**5
    assert abs(w.mean()) < 0.002
    assert abs(w.std() - 0.1) < 0.005
    assert all(not p.data.any() for k, p in e.params.items() if k.endswith(".b"))


def test_init_deterministic():
    a, b, c = (init_params(AcousticModelCfg(), s) for s in (3, 3, 4))
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params if k.endswith("w_x"))


def test_param_count_formula():
    for units in (8, 16):
        cfg = RecurrentCfg(n_in=40, layers=2, units=units)
        assert Enhancer(cfg).num_params() == recurrent_param_count(cfg)
    small, big = RecurrentCfg(units=32), RecurrentCfg(units=64)
    # each doubling adds the LSTM growth of two directions plus the wider projection per block
    delta = 2 * (2 * (lstm_param_count(40, 64) - lstm_param_count(40, 32)) + 2 * 32 * 40)
    assert recurrent_param_count(big) - recurrent_param_count(small) == delta


def test_batch_matches_single_utterance():
    e = Enhancer(RecurrentCfg(units=6), seed=2)
    am = AcousticModel(AcousticModelCfg(lstm_units=[6]), seed=3).eval()
    x = _x(11, B=2)
    with no_grad():
        short = Tensor(x.data[:7, 1:2].copy())
        batch_e = e(x, [11, 7]).data[:7, 1]
        np.testing.assert_allclose(batch_e, e(short, [7]).data[:, 0], atol=1e-5)
        batch_a, _ = am(x, [11, 7])
        single_a, n = am(short, [7])
        np.testing.assert_allclose(batch_a.data[: n[0], 1], single_a.data[:, 0], atol=1e-5)


def test_reverse_index():
    idx = reverse_index([3, 1], 4)
    assert idx[:, 0].tolist() == [2, 1, 0, 3]
    assert idx[:, 1].tolist() == [0, 1, 2, 3]


def test_state_dict_round_trip(tmp_path):
    am = AcousticModel(AcousticModelCfg(lstm_units=[4]), seed=0)
    am(_x(6), [6, 6])  # touch running statistics
    am.save(tmp_path / "am.bin")
    back = AcousticModel(AcousticModelCfg(lstm_units=[4]), seed=9).load(tmp_path / "am.bin")
    for k, v in am.state_dict().items():
        assert np.array_equal(v, back.state_dict()[k])


def test_state_dict_key_mismatch():
    with pytest.raises(KeyError):
        Enhancer(RecurrentCfg(layers=1)).load_state_dict(Enhancer(RecurrentCfg(layers=2)).state_dict())


def test_net_config_round_trip(tmp_path):
    cfg = NetConfig()
    path = tmp_path / "nets.json"
    path.write_text(json.dumps({**cfg.to_dict(), "_note": "ignored"}))
    assert NetConfig.load(path) == cfg


def test_lengths_after_conv_too_short():
    am = AcousticModel(AcousticModelCfg(lstm_units=[4]))
    with pytest.raises(ValueError):
        am(_x(4), [4, 0])


def test_tt_default_dtype_controls_param_precision():
    with default_dtype(np.float64):
        assert Enhancer(RecurrentCfg(units=2, layers=1)).parameters()[0].dtype == np.float64
    assert Enhancer(RecurrentCfg(units=2, layers=1)).parameters()[0].dtype == np.float32
    assert tt._dtype() is np.float32
