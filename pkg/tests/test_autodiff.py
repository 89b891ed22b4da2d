import numpy as np
import pytest

from docmt.autodiff import (ParamSet, Tape, Tensor, apply, backward, grad_check,
                            make_dropout_mask, paused_tape)
from docmt.exceptions import NumericsError, ShapeError
from docmt.gradcheck import check_op_gradients


def test_matmul_identity():
    eye = Tensor(np.eye(3))
    a = Tensor(np.arange(9, dtype=float).reshape(3, 3) / 7.0)
    out = apply("matmul", [eye, a])
    np.testing.assert_array_equal(out.data, a.data)


def test_softmax_symmetry():
    out = apply("softmax", [Tensor([0.0, 0.0, 0.0, 0.0])])
    np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25], rtol=0, atol=0)


def test_tanh_odd_at_origin():
    out = apply("tanh", [Tensor([0.0])])
    assert out.data[0] == 0.0


def test_softmax_is_distribution(rng):
    for _ in range(50):
        x = Tensor(rng.normal(scale=5.0, size=int(rng.integers(1, 8))))
        p = apply("softmax", [x]).data
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-12


def test_softmax_masked_entries_exactly_zero(rng):
    x = Tensor(rng.normal(size=5))
    mask = np.array([False, True, False, True, False])
    p = apply("softmax", [x], mask=mask).data
    assert p[1] == 0.0 and p[3] == 0.0
    assert abs(p.sum() - 1.0) <= 1e-12


def test_softmax_all_masked_rejected():
    with pytest.raises(ShapeError):
        apply("softmax", [Tensor([1.0, 2.0])], mask=np.array([True, True]))


def test_unknown_op_kind_rejected():
    with pytest.raises(ShapeError, match="unknown op kind"):
        apply("transmogrify", [Tensor([1.0])])


def test_shape_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        apply("add", [Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0])])


def test_nonfinite_output_names_op():
    huge = Tensor(np.full((2, 2), 1e308))
    with pytest.raises(NumericsError, match="matmul"):
        apply("matmul", [huge, huge])


def test_backward_product_rule():
    x, y = Tensor([2.0]), Tensor([3.0])
    with Tape() as tape:
        loss = apply("sum", [apply("elementwise-mul", [x, y])])
    g = backward(loss, tape)
    np.testing.assert_array_equal(g.for_tensor(x), [3.0])
    np.testing.assert_array_equal(g.for_tensor(y), [2.0])


def test_backward_tanh_at_origin():
    x = Tensor([0.0])
    with Tape() as tape:
        loss = apply("sum", [apply("tanh", [x])])
    g = backward(loss, tape)
    np.testing.assert_array_equal(g.for_tensor(x), [1.0])


def test_backward_softmax_cross_entropy_closed_form():
    # loss = -log softmax(logits)[gold]; the closed-form gradient is
    # softmax(logits) - onehot(gold), which sums to zero.  Cross-checked
    # against central finite differences below.
    logits = Tensor([1.0, 2.0])

    def forward():
        lp = apply("log-softmax", [logits])
        return apply("scalar-mul",
                     [apply("sum", [apply("slice", [lp], start=1, stop=2)])],
                     scalar=-1.0)

    with Tape() as tape:
        loss = forward()
    g = backward(loss, tape)
    p = np.exp([1.0, 2.0]) / np.exp([1.0, 2.0]).sum()
    expected = p - np.array([0.0, 1.0])
    np.testing.assert_allclose(g.for_tensor(logits), expected, atol=1e-15)
    assert abs(g.for_tensor(logits).sum()) < 1e-15
    assert grad_check(forward, {"logits": logits}, eps=1e-6) <= 1e-9


def test_backward_unreachable_nodes_are_zero():
    x, y = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    with Tape() as tape:
        loss = apply("sum", [x])
        dangling = apply("tanh", [y])
    g = backward(loss, tape)
    np.testing.assert_array_equal(g.for_tensor(y), [0.0, 0.0])
    np.testing.assert_array_equal(g[dangling.node], [0.0, 0.0])


def test_backward_rejects_nonscalar_loss():
    x = Tensor([1.0, 2.0])
    with Tape() as tape:
        out = apply("tanh", [x])
    with pytest.raises(ShapeError, match="scalar"):
        backward(out, tape)


def test_backward_rejects_foreign_loss():
    x = Tensor([1.0])
    with Tape() as tape:
        apply("tanh", [x])
    loss = Tensor(np.asarray(1.0))
    with pytest.raises(ShapeError):
        backward(loss, tape)


def test_duplicate_input_accumulates():
    x = Tensor([1.5])
    with Tape() as tape:
        loss = apply("sum", [apply("elementwise-mul", [x, x])])
    g = backward(loss, tape)
    np.testing.assert_allclose(g.for_tensor(x), [3.0])


def test_tape_replay_determinism(rng):
    x = Tensor(rng.normal(size=6))
    mask = make_dropout_mask(np.random.default_rng(0), (6,), 0.5)

    def forward():
        return apply("softmax", [apply("dropout-mask", [apply("tanh", [x])], mask=mask)])

    a = forward().data
    b = forward().data
    assert a.tobytes() == b.tobytes()


def test_every_op_gradient_matches_finite_differences():
    errors = check_op_gradients(seed=0)
    assert len(errors) >= 14
    for name, err in errors.items():
        assert err <= 1e-6, f"{name}: {err}"


def test_grad_check_quadratic():
    x = Tensor([5.0])

    def f():
        return apply("sum", [apply("elementwise-mul", [x, x])])

    assert grad_check(f, {"x": x}, eps=1e-5) <= 1e-8


def test_grad_check_rejects_nondeterministic():
    x = Tensor([1.0])
    state = {"n": 0.0}

    def f():
        state["n"] += 1.0
        return apply("sum", [apply("scalar-mul", [x], scalar=state["n"])])

    with pytest.raises(NumericsError, match="deterministic"):
        grad_check(f, {"x": x})


def test_grad_check_requires_positive_eps():
    x = Tensor([1.0])
    with pytest.raises(ShapeError):
        grad_check(lambda: apply("sum", [x]), {"x": x}, eps=0.0)


def test_concat_promotes_scalars():
    a = apply("sum", [Tensor([1.0, 2.0])])
    out = apply("concat", [a, Tensor([4.0])])
    np.testing.assert_array_equal(out.data, [3.0, 4.0])


def test_slice_bounds_checked():
    with pytest.raises(ShapeError, match="bounds"):
        apply("slice", [Tensor([1.0, 2.0])], start=1, stop=4)


def test_embedding_out_of_range_rejected():
    table = Tensor(np.zeros((4, 3)))
    with pytest.raises(ShapeError, match="out-of-range"):
        apply("embedding-lookup", [table], index=4)


def test_dropout_mask_properties():
    rng = np.random.default_rng(5)
    mask = make_dropout_mask(rng, (1000,), 0.25)
    assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}
    assert make_dropout_mask(rng, (4,), 0.0).tolist() == [1.0] * 4
    with pytest.raises(ShapeError):
        make_dropout_mask(rng, (4,), 1.0)


def test_paused_tape_hides_recording():
    x = Tensor([1.0])
    with Tape() as tape:
        apply("tanh", [x])
        before = tape.num_records
        with paused_tape():
            apply("tanh", [Tensor([2.0])])
        assert tape.num_records == before


def test_nested_tapes_rejected():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_paramset_frozen_and_trainable():
    ps = ParamSet()
    ps.add("a", Tensor([1.0]))
    ps.add("b", Tensor([2.0]))
    ps.frozen.add("b")
    assert [n for n, _ in ps.trainable_items()] == ["a"]
    with pytest.raises(ShapeError):
        ps.add("a", Tensor([0.0]))
    snap = ps.snapshot()
    ps["a"].data[...] = 9.0
    ps.restore(snap)
    assert ps["a"].data[0] == 1.0
