import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenetext.fixtures import generate_corpus  # noqa: E402


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The 20-image evaluation corpus (alternating polarities, seed 0)."""
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, n=20, seed=0)
    return root


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    generate_corpus(root, n=4, seed=5, width=320, height=240)
    return root
