from __future__ import annotations

import threading

import pytest

from jamaica.api import App, make_server
from jamaica.mlengine import kernels
from jamaica.service import Service
from jamaica.tagstore import TagStore


@pytest.fixture
def store():
    return TagStore()


@pytest.fixture
def service():
    svc = Service()
    yield svc
    svc.close()


@pytest.fixture
def app(service):
    return App(service)


@pytest.fixture(params=kernels.available())
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.load(request.param)
    for name in ("knn", "fit", "score"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


class LiveServer:
    def __init__(self, service: Service):
        self.service = service
        self.server = make_server(App(service), "127.0.0.1:0")
        self.addr = f"127.0.0.1:{self.server.server_address[1]}"
        self.url = f"http://{self.addr}"
        service.subscriptions.callback_url = f"{self.url}/v1/notify"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()
        self.service.close()


@pytest.fixture
def live_factory():
    servers = []

    def make(**kwargs) -> LiveServer:
        srv = LiveServer(Service(**kwargs))
        servers.append(srv)
        return srv

    yield make
    for s in servers:
        s.close()


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(n, ok, detail)``; asserts ``ok``."""
    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
