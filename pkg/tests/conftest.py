import numpy as np
import pytest
from hypothesis import settings

from segconsist.model import ToyConvModel, train_toy
from segconsist.scenes import SceneSpec, synth_dataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


class ConstantModel:
    """Predicts class ``cls`` everywhere, whatever the input."""

    def __init__(self, n_classes=5, cls=0):
        self.n_classes = n_classes
        self.cls = cls

    def predict_scores(self, img):
        s = np.zeros(img.shape[:2] + (self.n_classes,))
        s[..., self.cls] = 1.0
        return s

    def predict_labels(self, img):
        return np.full(img.shape[:2], self.cls, dtype=np.int64)


@pytest.fixture
def constant_model():
    return ConstantModel()


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec(height=64, width=64)


@pytest.fixture(scope="session")
def small_model(small_spec):
    """A quickly trained toy model on 64x64 scenes (not the desk-scale regime)."""
    data = synth_dataset(small_spec, 40, 11)
    model = ToyConvModel(seed=0)
    train_toy(model, data, epochs=10, lr=0.02, rng=1, crop_range=(32, 64))
    return model


@pytest.fixture(scope="session")
def small_scenes(small_spec):
    return synth_dataset(small_spec, 4, 99)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
