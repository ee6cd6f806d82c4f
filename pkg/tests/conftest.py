import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from trainscape.subject import make_blobs_pair, train_subject


@pytest.fixture(scope="session")
def blob_data():
    """Small, well-separated 3-class blob pair shared across modules."""
    return make_blobs_pair(d=10, class_count=3, n_train=240, n_test=60,
                           separation=5.0, seed=7)


@pytest.fixture(scope="session")
def blob_checkpoints(blob_data):
    train, _ = blob_data
    return train_subject(train, epochs=3, seed=7)
