import numpy as np
import pytest

from storybooth import kernels

py = kernels.python_backend
cc = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cc is None, reason="compiled kernels not built")


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")


@needs_compiled
def test_masked_softmax_backends_agree(rng):
    for n in (1, 3, 17, 64):
        scores = rng.normal(scale=10, size=(n, n))
        bits = (rng.random((n, n)) < 0.3).astype(np.uint8)
        np.fill_diagonal(bits, 1)
        for mask in (None, bits):
            a, b = py.masked_softmax(scores, mask), cc.masked_softmax(scores, mask)
            assert np.max(np.abs(a - b)) <= 1e-15
            if mask is not None:
                assert (b[mask == 0] == 0).all()


@needs_compiled
def test_region_mask_backends_agree(rng):
    words = rng.integers(0, 8, 40).astype(np.uint64)
    draws = rng.random((40, 40))
    for d in (None, draws):
        assert np.array_equal(py.region_mask(words, d, 0.8), cc.region_mask(words, d, 0.8))


@needs_compiled
def test_gated_argmax_backends_agree(rng):
    for b, n in ((1, 4), (2, 5), (3, 7)):
        w = rng.random((b * n, b * n)) * (rng.random((b * n, b * n)) > 0.5)
        w[0] = 0.0
        for i in range(b):
            w[i * n:(i + 1) * n, i * n:(i + 1) * n] = 0.0
        ta, sa = py.gated_argmax(w, b, n)
        tb, sb = cc.gated_argmax(w, b, n)
        assert np.array_equal(ta, tb) and np.array_equal(sa, sb)
        assert ta[0] == -1


def test_fully_masked_row_is_an_error():
    with pytest.raises(ValueError):
        kernels.masked_softmax(np.zeros((2, 2)), np.array([[0, 0], [1, 1]], dtype=np.uint8))
