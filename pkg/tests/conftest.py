from __future__ import annotations

import pytest

from hpd.model import Model, ModelConfig, init_model


@pytest.fixture(scope="session")
def tiny_model() -> Model:
    return init_model(ModelConfig())
