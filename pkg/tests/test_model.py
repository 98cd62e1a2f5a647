import numpy as np
import pytest

from iclip.checks import CHECKS, TOLERANCE
from iclip.errors import DimensionError, UsageError
from iclip.features import FrameBundle, Person
from iclip.model import ICLIPModel, cosine_rows, frame_forward
from iclip.prompting import PromptConfig
from iclip.tensor import Tensor


def test_cosine_rows_per_person_label_sets():
    feats = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
    sets = [Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])), Tensor(np.array([[3.0, 0.0], [1.0, 1.0]]))]
    np.testing.assert_allclose(cosine_rows(feats, sets).data, [[1, 0], [0, 1 / np.sqrt(2)]])
    with pytest.raises(DimensionError):
        cosine_rows(feats, sets[:1])


def test_initialize_is_seeded_and_copy_is_deep():
    a, b = ICLIPModel.initialize(8, seed=1), ICLIPModel.initialize(8, seed=1)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    c = a.copy()
    c.params["prompt.0.w_q"][0, 0] += 1
    assert a.params["prompt.0.w_q"][0, 0] != c.params["prompt.0.w_q"][0, 0]


def test_model_validation():
    with pytest.raises(UsageError):
        ICLIPModel(8, tau=0)
    with pytest.raises(DimensionError):
        ICLIPModel.initialize(10, prompt=PromptConfig(heads=4))


def test_frame_forward_checks_inputs():
    model = ICLIPModel.initialize(8, seed=0)
    frame = FrameBundle("v", 0, np.ones(4), (Person((0, 0, 1, 1), 0.9, np.ones(4)),), ())
    with pytest.raises(DimensionError):
        frame_forward(frame, frame.persons, [], model.tensors(), model)
    with pytest.raises(UsageError):
        frame_forward(frame, [], [], model.tensors(), model)


@pytest.mark.parametrize("check", [c for c in CHECKS if c.name.startswith("end_to_end")], ids=lambda c: c.name)
def test_end_to_end_gradients(check):
    for seed in range(2):
        assert max(check.fn(seed).values()) < TOLERANCE
