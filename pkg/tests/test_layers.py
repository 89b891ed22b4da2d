import numpy as np
import pytest

from docmt.autodiff import Tensor
from docmt.exceptions import ShapeError
from docmt.gradcheck import check_layer_gradients
from docmt.layers import GruParams, LstmParams, birnn, gru_step, lstm_step


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def numpy_gru(x, h, p):
    z = _sigmoid(p.w_update.data @ x + p.u_update.data @ h + p.b_update.data)
    r = _sigmoid(p.w_reset.data @ x + p.u_reset.data @ h + p.b_reset.data)
    n = np.tanh(p.w_cand.data @ x + p.u_cand.data @ (r * h) + p.b_cand.data)
    return (1.0 - z) * h + z * n


def numpy_lstm(x, h, c, p):
    i = _sigmoid(p.w_in.data @ x + p.u_in.data @ h + p.b_in.data)
    f = _sigmoid(p.w_forget.data @ x + p.u_forget.data @ h + p.b_forget.data)
    o = _sigmoid(p.w_out.data @ x + p.u_out.data @ h + p.b_out.data)
    g = np.tanh(p.w_cell.data @ x + p.u_cell.data @ h + p.b_cell.data)
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def test_gru_zero_params_halves_state():
    p = GruParams.zeros(3, 4)
    h = Tensor([1.0, -2.0, 0.5, 4.0])
    out = gru_step(Tensor(np.zeros(3)), h, p)
    np.testing.assert_allclose(out.data, 0.5 * h.data, atol=1e-15)


def test_gru_saturated_update_gate_forgets_state():
    p = GruParams.zeros(3, 4)
    p.b_update.data[...] = 50.0
    h = Tensor([1.0, -2.0, 0.5, 4.0])
    out = gru_step(Tensor(np.zeros(3)), h, p)
    # z -> 1 so h' -> candidate n = 0
    assert np.max(np.abs(out.data)) < 1e-10


def test_gru_matches_formula_oracle(rng):
    p = GruParams.create(rng, 2, 2)
    x = Tensor(rng.normal(size=2))
    h = Tensor(rng.normal(size=2))
    out = gru_step(x, h, p)
    np.testing.assert_allclose(out.data, numpy_gru(x.data, h.data, p), atol=1e-14)


def test_lstm_zero_params_zero_state():
    p = LstmParams.zeros(3, 4)
    h, c = lstm_step(Tensor(np.zeros(3)), (Tensor(np.zeros(4)), Tensor(np.zeros(4))), p)
    np.testing.assert_array_equal(h.data, np.zeros(4))
    np.testing.assert_array_equal(c.data, np.zeros(4))


def test_lstm_forget_gate_carries_cell():
    p = LstmParams.zeros(2, 3)
    p.b_forget.data[...] = 60.0   # forget gate ~ 1
    p.b_in.data[...] = -60.0      # input gate ~ 0
    c = Tensor([0.3, -1.2, 2.0])
    _, c2 = lstm_step(Tensor(np.zeros(2)), (Tensor(np.zeros(3)), c), p)
    np.testing.assert_allclose(c2.data, c.data, atol=1e-12)


def test_lstm_matches_formula_oracle(rng):
    p = LstmParams.create(rng, 2, 2)
    x = Tensor(rng.normal(size=2))
    h = Tensor(rng.normal(size=2))
    c = Tensor(rng.normal(size=2))
    hh, cc = lstm_step(x, (h, c), p)
    oh, oc = numpy_lstm(x.data, h.data, c.data, p)
    np.testing.assert_allclose(hh.data, oh, atol=1e-14)
    np.testing.assert_allclose(cc.data, oc, atol=1e-14)


def test_birnn_empty_rejected(rng):
    p = GruParams.create(rng, 2, 3)
    with pytest.raises(ShapeError, match="empty"):
        birnn([], p, p)


def test_birnn_single_position(rng):
    fwd = GruParams.create(rng, 2, 3)
    bwd = GruParams.create(rng, 2, 3)
    x = Tensor(rng.normal(size=2))
    joined, f_fin, b_fin = birnn([x], fwd, bwd)
    assert len(joined) == 1
    expect_f = gru_step(x, Tensor(np.zeros(3)), fwd).data
    expect_b = gru_step(x, Tensor(np.zeros(3)), bwd).data
    np.testing.assert_array_equal(joined[0].data, np.concatenate([expect_f, expect_b]))
    np.testing.assert_array_equal(f_fin.data, expect_f)
    np.testing.assert_array_equal(b_fin.data, expect_b)


def test_birnn_reversal_swaps_halves(rng):
    fwd = GruParams.create(rng, 2, 3)
    bwd = GruParams.create(rng, 2, 3)
    seq = [Tensor(rng.normal(size=2)) for _ in range(4)]
    joined, _, _ = birnn(seq, fwd, bwd)
    rev_joined, _, _ = birnn(list(reversed(seq)), bwd, fwd)
    for i, j in enumerate(reversed(range(4))):
        orig = joined[i].data
        swapped = np.concatenate([rev_joined[j].data[3:], rev_joined[j].data[:3]])
        np.testing.assert_array_equal(orig, swapped)


def test_birnn_forward_half_is_unidirectional_unroll(rng):
    fwd = GruParams.create(rng, 2, 3)
    bwd = GruParams.create(rng, 2, 3)
    seq = [Tensor(rng.normal(size=2)) for _ in range(3)]
    joined, f_fin, _ = birnn(seq, fwd, bwd)
    h = np.zeros(3)
    for x in seq:
        h = numpy_gru(x.data, h, fwd)
    np.testing.assert_allclose(joined[-1].data[:3], h, atol=1e-14)
    np.testing.assert_allclose(f_fin.data, h, atol=1e-14)


def test_birnn_lstm_cells(rng):
    fwd = LstmParams.create(rng, 2, 3)
    bwd = LstmParams.create(rng, 2, 3)
    seq = [Tensor(rng.normal(size=2)) for _ in range(3)]
    joined, _, _ = birnn(seq, fwd, bwd, cell_kind="lstm")
    h, c = np.zeros(3), np.zeros(3)
    for x in seq:
        h, c = numpy_lstm(x.data, h, c, fwd)
    np.testing.assert_allclose(joined[-1].data[:3], h, atol=1e-14)


def test_birnn_cell_kind_mismatch(rng):
    p = GruParams.create(rng, 2, 3)
    with pytest.raises(ShapeError, match="cell kind"):
        birnn([Tensor(np.zeros(2))], p, p, cell_kind="lstm")


def test_cell_gradients_match_finite_differences():
    errors = check_layer_gradients(seed=0)
    for name in ("gru_step", "lstm_step", "birnn", "affine"):
        assert errors[name] <= 1e-4, f"{name}: {errors[name]}"
