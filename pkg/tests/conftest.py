import numpy as np
import pytest

from relevance_lens.nn import Dense, Flatten, Model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_model(weights, bias=None, input_shape=None, labels=None):
    """Flatten -> Dense on a 1-channel image; handy for linear-model checks."""
    w = np.asarray(weights, dtype=np.float64)
    n_out, n_in = w.shape
    if input_shape is None:
        side = int(round(np.sqrt(n_in)))
        input_shape = (1, side, n_in // side)
    b = np.zeros(n_out) if bias is None else bias
    c = input_shape[0]
    return Model(
        [Flatten(), Dense(w, b)],
        input_shape,
        np.zeros(c),
        np.ones(c),
        labels or [f"c{i}" for i in range(n_out)],
    )
