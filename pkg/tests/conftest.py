from __future__ import annotations

from pathlib import Path

import pytest

import edgexai as ex

ASSETS = Path(__file__).resolve().parent.parent / "assets"


@pytest.fixture(scope="session")
def assets_dir() -> Path:
    return ASSETS


@pytest.fixture(scope="session")
def classifier_net() -> ex.NetworkSpec:
    return ex.image_classifier()


@pytest.fixture(scope="session")
def relu_net() -> ex.NetworkSpec:
    return ex.image_classifier(fused_relu=True)


@pytest.fixture(scope="session")
def trained_blob() -> bytes:
    return (ASSETS / "classifier32_relu.weights.bin").read_bytes()


@pytest.fixture(scope="session")
def trained_weights(relu_net, trained_blob) -> ex.WeightStore:
    return ex.load_weights(trained_blob, relu_net, ex.FxpFormat(8))
