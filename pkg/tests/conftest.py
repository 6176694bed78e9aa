import numpy as np
import pytest

import bitsiege as bs


@pytest.fixture(scope="session")
def desk():
    """Frozen desk victim: synthetic data, trained float model, 8-bit quant model."""
    spec = bs.SynthSpec()
    train_ds, test_ds = bs.gen_synthetic(spec)
    model = bs.train(bs.desk_architecture(spec.classes, spec.input_shape), train_ds, bs.TrainConfig())
    return {"spec": spec, "train": train_ds, "test": test_ds, "model": model,
            "qmodel": bs.quantize_model(model, 8)}


@pytest.fixture()
def tiny_arch():
    return bs.Architecture((bs.Dense(3, 3),), (3,), 3)


def make_tiny_dense(weights, biases=None):
    """Single dense-layer model from a 2-D weight matrix."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.zeros(w.shape[0]) if biases is None else np.asarray(biases, dtype=np.float64)
    arch = bs.Architecture((bs.Dense(w.shape[1], w.shape[0]),), (w.shape[1],), w.shape[0])
    return bs.FloatModel(arch, [w], [b])


def random_qmodel(rng, nq=8):
    """Small random quantized model for fuzzing."""
    arch = bs.Architecture(
        (bs.Conv2D(1, 2, 3), bs.ReLU(), bs.Flatten(), bs.Dense(2 * 4 * 4, 3)), (1, 6, 6), 3)
    lo, hi = -(1 << (nq - 1)), (1 << (nq - 1)) - 1
    params, codes, biases = [], [], []
    from bitsiege.model import weight_shape, filter_count
    for _, layer in arch.parametric_layers():
        params.append(bs.QuantParams(nq, float(rng.uniform(0.005, 0.05))))
        codes.append(rng.integers(lo, hi + 1, size=weight_shape(layer), dtype=np.int64).astype(np.int16))
        biases.append(rng.standard_normal(filter_count(layer)) * 0.1)
    return bs.QuantModel(arch, params, codes, biases)
