import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arcrec import autodiff as ad
from arcrec.autodiff import NonFiniteError, Tape, TapeError, Tensor
from conftest import assert_grads_close, central_difference, check_op_gradient, \
    taped_gradients

N_TRIALS = 100


def test_dot_example():
    assert ad.dot(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).item() == 11.0


def test_softmax_symmetry_example():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0])).value, [0.5, 0.5])


def test_sigmoid_identity_example():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_square_gradient_example():
    x = Tensor(3.0)
    with Tape() as tape:
        y = ad.mul(x, x)
    assert float(tape.backward(y)[x]) == pytest.approx(6.0)


def test_sigmoid_gradient_example():
    x = Tensor(0.0)
    with Tape() as tape:
        y = ad.sigmoid(x)
    assert float(tape.backward(y)[x]) == pytest.approx(0.25)


def test_untaped_value_matches_taped():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, size=(4, 3))
    b = rng.uniform(-1, 1, size=(3,))

    def expr():
        return ad.tsum(ad.sigmoid(ad.matmul(Tensor(a), Tensor(b))))

    plain = expr().item()
    with Tape():
        taped = expr().item()
    assert plain == taped


# ---------------------------------------------------------------------------
# every primitive against central finite differences
# ---------------------------------------------------------------------------

def _loss_weights(rng, shape):
    w = rng.uniform(0.5, 1.5, size=shape)
    return lambda t: ad.tsum(ad.mul(t, Tensor(w)))


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_binary_elementwise_gradients(trial):
    rng = np.random.default_rng(1000 + trial)
    shape = (rng.integers(1, 5), rng.integers(1, 4))
    loss = _loss_weights(rng, shape)
    for op in (ad.add, ad.sub, ad.mul):
        check_op_gradient(lambda ts, op=op: loss(op(ts[0], ts[1])), 2,
                          [shape, shape], rng)
    # division: keep the denominator away from zero
    arrays = [rng.uniform(-1, 1, size=shape), rng.uniform(0.5, 1.0, size=shape)]
    tensors = [Tensor(a.copy()) for a in arrays]
    analytic = taped_gradients(lambda ts: loss(ad.div(ts[0], ts[1])), tensors)
    numeric = central_difference(
        lambda arrs: loss(ad.div(Tensor(arrs[0]), Tensor(arrs[1]))).item(), arrays)
    for a, n in zip(analytic, numeric):
        assert_grads_close(a, n)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_matmul_dot_concat_gradients(trial):
    rng = np.random.default_rng(2000 + trial)
    m, n, p = rng.integers(1, 5, size=3)
    loss2 = _loss_weights(rng, (m, p))
    check_op_gradient(lambda ts: loss2(ad.matmul(ts[0], ts[1])), 2,
                      [(m, n), (n, p)], rng)
    loss1 = _loss_weights(rng, (m,))
    check_op_gradient(lambda ts: loss1(ad.matmul(ts[0], ts[1])), 2,
                      [(m, n), (n,)], rng)
    check_op_gradient(lambda ts: ad.dot(ts[0], ts[1]), 2, [(n,), (n,)], rng)
    lossc = _loss_weights(rng, (m, 2 * n))
    check_op_gradient(lambda ts: lossc(ad.concat(ts, axis=1)), 2,
                      [(m, n), (m, n)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_nonlinear_gradients(trial):
    rng = np.random.default_rng(3000 + trial)
    n = int(rng.integers(2, 7))
    loss = _loss_weights(rng, (n,))
    check_op_gradient(lambda ts: loss(ad.softmax(ts[0])), 1, [(n,)], rng)
    check_op_gradient(lambda ts: loss(ad.sigmoid(ts[0])), 1, [(n,)], rng)
    check_op_gradient(lambda ts: loss(ad.tanh(ts[0])), 1, [(n,)], rng)
    check_op_gradient(lambda ts: loss(ad.exp(ts[0])), 1, [(n,)], rng)
    check_op_gradient(lambda ts: loss(ad.log_sigmoid(ts[0])), 1, [(n,)], rng)
    check_op_gradient(lambda ts: ad.norm(ts[0]), 1, [(n,)], rng)
    # log and sqrt need positive inputs
    arrays = [rng.uniform(0.1, 1.0, size=n)]
    for op in (ad.log, ad.sqrt):
        tensors = [Tensor(arrays[0].copy())]
        analytic = taped_gradients(lambda ts, op=op: loss(op(ts[0])), tensors)
        numeric = central_difference(
            lambda arrs, op=op: loss(op(Tensor(arrs[0]))).item(), arrays)
        assert_grads_close(analytic[0], numeric[0])


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_structural_gradients(trial):
    rng = np.random.default_rng(4000 + trial)
    m, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    idx = rng.integers(0, m, size=int(rng.integers(1, 7)))
    loss = _loss_weights(rng, (len(idx), d))
    check_op_gradient(lambda ts: loss(ad.gather_rows(ts[0], idx)), 1, [(m, d)], rng)

    seg = np.sort(rng.integers(0, 3, size=m))
    loss_seg = _loss_weights(rng, (3, d))
    check_op_gradient(lambda ts: loss_seg(ad.segment_sum(ts[0], seg, 3)), 1,
                      [(m, d)], rng)
    loss_seg1 = _loss_weights(rng, (3,))
    check_op_gradient(lambda ts: loss_seg1(ad.segment_sum(ts[0], seg, 3)), 1,
                      [(m,)], rng)

    j = int(rng.integers(0, d))
    loss_col = _loss_weights(rng, (m,))
    check_op_gradient(lambda ts: loss_col(ad.column(ts[0], j)), 1, [(m, d)], rng)
    check_op_gradient(lambda ts: ad.element(ts[0], j), 1, [(d,)], rng)
    check_op_gradient(
        lambda ts: loss_col(ad.vector_of([ad.tsum(t) for t in ts])), m,
        [(2,)] * m, rng)
    check_op_gradient(lambda ts: loss_col(ad.clip_min(ts[0], 0.1)), 1, [(m,)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_reduction_and_const_gradients(trial):
    rng = np.random.default_rng(5000 + trial)
    m, d = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    check_op_gradient(lambda ts: ad.tsum(ts[0]), 1, [(m, d)], rng)
    loss0 = _loss_weights(rng, (d,))
    check_op_gradient(lambda ts: loss0(ad.tsum(ts[0], axis=0)), 1, [(m, d)], rng)
    loss1 = _loss_weights(rng, (m,))
    check_op_gradient(lambda ts: loss1(ad.tsum(ts[0], axis=1)), 1, [(m, d)], rng)
    check_op_gradient(lambda ts: loss1(ad.neg(ts[0])), 1, [(m,)], rng)
    check_op_gradient(lambda ts: loss1(ad.scale(ts[0], -1.7)), 1, [(m,)], rng)

    A = rng.uniform(-1, 1, size=(m, m))
    check_op_gradient(lambda ts: loss1(ad.matmul_const(A, ts[0])), 1, [(m,)], rng)
    import scipy.sparse as sp
    S = sp.csr_matrix(A * (np.abs(A) > 0.3))
    lossm = _loss_weights(rng, (m, d))
    check_op_gradient(lambda ts: lossm(ad.matmul_const(S, ts[0])), 1, [(m, d)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_broadcast_gradients(trial):
    rng = np.random.default_rng(6000 + trial)
    m, d = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    loss = _loss_weights(rng, (m, d))
    check_op_gradient(lambda ts: loss(ad.add(ts[0], ts[1])), 2, [(m, d), (d,)], rng)
    check_op_gradient(lambda ts: loss(ad.mul(ts[0], ts[1])), 2, [(m, d), ()], rng)
    check_op_gradient(lambda ts: loss(ad.sub(ts[0], ts[1])), 2, [(m, d), ()], rng)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-30, max_value=30), min_size=1, max_size=12))
def test_softmax_positive_and_normalized(logits):
    s = ad.softmax(Tensor(np.array(logits))).value
    assert np.all(s > 0)
    assert abs(s.sum() - 1.0) < 1e-12


def test_softmax_rowwise_normalized():
    rng = np.random.default_rng(7)
    s = ad.softmax(Tensor(rng.normal(size=(9, 5)))).value
    np.testing.assert_allclose(s.sum(axis=1), np.ones(9), atol=1e-12)
    assert np.all(s > 0)


def test_record_backward_deterministic():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(3,))

    def run():
        ta, tb = Tensor(a.copy()), Tensor(b.copy())
        with Tape() as tape:
            out = ad.tsum(ad.log_sigmoid(ad.matmul(ta, tb)))
        g = tape.backward(out)
        return out.item(), g[ta].copy(), g[tb].copy()

    v1, ga1, gb1 = run()
    v2, ga2, gb2 = run()
    assert v1 == v2
    assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


def test_tape_single_use():
    x = Tensor(2.0)
    with Tape() as tape:
        y = ad.mul(x, x)
    tape.backward(y)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(TapeError):
            with Tape():
                pass


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        ad.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        ad.div(Tensor(1.0), Tensor(0.0))


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.dot(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 2, 2)))


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)
