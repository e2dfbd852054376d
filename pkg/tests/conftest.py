import pytest
from hypothesis import settings

from contactflow import build_perturbed_map, standard_flow

settings.register_profile(
    "suite", deadline=None, max_examples=60, derandomize=True, database=None
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def flow():
    return standard_flow()


@pytest.fixture(scope="session")
def pflow():
    # one shared perturbed flow; construction runs the path-independence check
    return build_perturbed_map(0.02)
