import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))
# the test client warns once, at import time, about its httpx backend
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    import fastapi.testclient  # noqa: E402, F401

from oai_mock import FIXTURE, MockOAIServer  # noqa: E402

from termsuggest.engine import IndexBuilder  # noqa: E402
from termsuggest.store import FileStore  # noqa: E402

# source terms, target terms per document
FIXTURE_DOCS = [
    ({"youth", "unemployment"}, {"labor market", "adolescent"}),
    ({"youth", "education"}, {"adolescent"}),
    ({"unemployment"}, {"labor market"}),
    ({"education"}, {"school"}),
]


@pytest.fixture
def fixture_index():
    builder = IndexBuilder()
    for src, tgt in FIXTURE_DOCS:
        builder.add_document(src, tgt)
    return builder.build()


@pytest.fixture
def mock_oai():
    servers = []

    def make(records=FIXTURE, **kw):
        srv = MockOAIServer(records, **kw).__enter__()
        servers.append(srv)
        return srv

    yield make
    for srv in servers:
        srv.__exit__(None, None, None)


@pytest.fixture
def store(tmp_path):
    return FileStore(tmp_path / "store")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(mod.summary_line(number))
