import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_server import FixtureServer  # noqa: E402

from urlhealth.archive import ArchiveClient, ArchiveResult, HttpTransport  # noqa: E402
from urlhealth.probe import ProbeConfig  # noqa: E402


@pytest.fixture(scope="session")
def _server():
    with FixtureServer() as srv:
        yield srv


@pytest.fixture
def server(_server):
    _server.state.reset()
    return _server


@pytest.fixture
def fast_config():
    return ProbeConfig(connect_timeout=2, total_timeout=5, workers=8, retry_backoff=0.01)


@pytest.fixture
def fixture_archive(server):
    return ArchiveClient(HttpTransport(server.archive_endpoint, retries=1, backoff=0.01), qps=1000)


class FakeArchive:
    """In-memory archive: ``snapshots`` is the set of URLs that were ever archived."""

    def __init__(self, snapshots=(), down=()):
        self.snapshots = set(snapshots)
        self.down = set(down)
        self.calls = []

    def __call__(self, url):
        from urlhealth.archive import ArchiveUnavailable

        self.calls.append(url)
        if url in self.down:
            raise ArchiveUnavailable(url, "fixture outage")
        if url in self.snapshots:
            return ArchiveResult(url, True, "20200101000000", f"http://web.archive.org/web/2020/{url}", "")
        return ArchiveResult(url, False, None, None, "")


@pytest.fixture
def fake_archive():
    return FakeArchive


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, desc = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {desc}")
