import numpy as np
import pytest

import epistemic as ep

BLOB_CENTERS = [[0.0, 0.0], [3.8, 0.0]]


@pytest.fixture(scope="session")
def blobs_bundle():
    """Trained two-blob classifier with train/validation/test splits (sigma 1)."""
    train = ep.make_blobs(BLOB_CENTERS, sigma=1.0, per_class=500, seed=11)
    validation = ep.make_blobs(BLOB_CENTERS, sigma=1.0, per_class=125, seed=14,
                               role="validation")
    test = ep.make_blobs(BLOB_CENTERS, sigma=1.0, per_class=250, seed=12, role="test")
    net = ep.train(ep.make_net(2, [8, 5], 2), train, epochs=150, learning_rate=0.05,
                   batch_size=32, seed=13)
    return {"net": net, "train": train, "validation": validation, "test": test}


@pytest.fixture(scope="session")
def iris_splits():
    from importlib.resources import files

    data = ep.load_csv(str(files("epistemic").joinpath("data/iris.csv")))
    train, validation, test = ep.split(data, (0.72, 0.14, 0.14), seed=2)
    return ep.rescale("minmax", train, train, validation, test)


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T
