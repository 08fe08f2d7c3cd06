import numpy as np
import pytest

from cogflow.cogspace import CognitiveSpace
from cogflow.semantics import SemanticModel, VelocityField


class ConstantField(VelocityField):
    """Test double: velocity independent of (x, t)."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.dim = self.value.shape[0]

    def eval(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.value.copy()
        return np.broadcast_to(self.value, x.shape).copy()

    def affine_coefficients(self, t):
        return 0.0, self.value.copy()


@pytest.fixture
def space2() -> CognitiveSpace:
    return CognitiveSpace.from_names("valence", "arousal")


@pytest.fixture
def biased_model(space2) -> SemanticModel:
    return SemanticModel.for_space(
        space2, effect_magnitudes=1.5, position_bias=0.5, default_variance=0.6
    )
