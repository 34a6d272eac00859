import numpy as np
import pytest

from sanet.data import make_blobs
from sanet.models import build_model, named_spec
from sanet.training import TrainConfig, train


@pytest.fixture(scope="session")
def blobs_dataset():
    # 600 train / 500 val images, 10 classes
    return make_blobs(train_per_class=60, val_per_class=50, seed=11)


@pytest.fixture(scope="session")
def trained_tiny(blobs_dataset):
    """A tiny pairwise network trained to high accuracy on the blobs task."""
    model = build_model(named_spec("san-tiny"), seed=11)
    report = train(model, blobs_dataset, TrainConfig(epochs=5, batch_size=64, seed=11))
    model.eval()
    return model, report
