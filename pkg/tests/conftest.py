import json
import sys
from pathlib import Path

import pytest

from faultsieve.corpus import Corpus, extract_methods
from faultsieve.embedding import HashingEmbedder, build_index
from faultsieve.llm.backends import MockBackend
from faultsieve.pipeline import load_bundle

MINI = Path(__file__).parent / "fixtures" / "miniproject"
BUG_IDS = ("mini-1", "mini-2", "mini-3")


@pytest.fixture(scope="session")
def mini_corpus() -> Corpus:
    return Corpus(extract_methods(MINI / "src"))


@pytest.fixture(scope="session")
def embedder() -> HashingEmbedder:
    return HashingEmbedder()


@pytest.fixture(scope="session")
def mini_index(mini_corpus, embedder):
    return build_index(mini_corpus.documents, embedder)


@pytest.fixture
def mini_script() -> dict:
    return json.loads((MINI / "mock_script.json").read_text())


@pytest.fixture
def mock(mini_script) -> MockBackend:
    return MockBackend(mini_script)


@pytest.fixture
def bundle():
    return lambda bug_id: load_bundle(MINI / "bugs" / bug_id)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
