import numpy as np
import pytest

from arcrec.autodiff import Tape, Tensor


def central_difference(f, arrays, h=1e-5):
    """Gradient of scalar f(list_of_arrays) by central differences."""
    grads = []
    for which in range(len(arrays)):
        base = arrays[which]
        g = np.zeros_like(base, dtype=np.float64)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[which][idx] += h
            minus[which][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = (err <= rel * denom) | (err <= abs_floor)
    assert np.all(ok), (
        f"gradient mismatch: max abs err {err.max()}, "
        f"max rel err {(err / np.maximum(denom, 1e-30)).max()}")


def taped_gradients(build, tensors):
    """Run build(tensors) under a tape, return per-tensor gradients."""
    with Tape() as tape:
        out = build(tensors)
    grads = tape.backward(out)
    return [grads.get(t, np.zeros_like(t.value)) for t in tensors]


def check_op_gradient(build_taped, n_inputs, shapes, rng, rel=1e-4):
    """Compare taped gradients of a scalar-valued op composition with
    central differences on random inputs of magnitude <= 1."""
    arrays = [rng.uniform(-1.0, 1.0, size=s) for s in shapes[:n_inputs]]
    tensors = [Tensor(a.copy()) for a in arrays]
    analytic = taped_gradients(build_taped, tensors)
    numeric = central_difference(
        lambda arrs: build_taped([Tensor(a) for a in arrs]).item(), arrays)
    for a, n in zip(analytic, numeric):
        assert_grads_close(a, n)


@pytest.fixture(scope="session")
def tiny_market():
    from arcrec.simulate import SimConfig, generate_market, simulate_periods
    market = generate_market(SimConfig(n_consumers=40, n_products=30, seed=11))
    log, truth = simulate_periods(market, seed=12)
    return market, log, truth
