import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from zsdvc.fixtures import mock_backends, planted_video  # noqa: E402


@pytest.fixture(scope="session")
def backends():
    return mock_backends(0)


@pytest.fixture(scope="session")
def scorer(backends):
    return backends[0]


@pytest.fixture(scope="session")
def lm(backends):
    return backends[1]


@pytest.fixture(scope="session")
def planted(scorer):
    return planted_video(scorer)
