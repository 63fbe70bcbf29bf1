import pytest

from boxforge import kernels

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    mod = BACKENDS[request.param]
    for name in ("iou_matrix", "nms_keep", "soft_nms", "box_vote"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
