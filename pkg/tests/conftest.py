import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[tuple[int, str, bool]] = []


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(3, "gradient correctness")`` at the top of a test; the
    outcome is taken from the test's result.
    """
    entry = {}

    def register(number, title):
        entry["number"], entry["title"] = number, title

    yield register
    if entry:
        rep = getattr(request.node, "rep_call", None)
        _ACCEPTANCE.append((entry["number"], entry["title"], bool(rep and rep.passed)))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}")


SYNTH_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.cfg"


@pytest.fixture(scope="session")
def trained_synthetic(tmp_path_factory):
    """Synthetic 300-image dataset plus a model trained on it through the CLI."""
    import time

    from pdcovidnet.cli import main

    root = tmp_path_factory.mktemp("synthetic")
    data, weights, report = root / "data", root / "model.bin", root / "report.csv"
    assert main(["synth-data", "--out", str(data), "--per-class", "100", "--size", "64", "--seed", "0"]) == 0
    start = time.perf_counter()
    code = main(["train", "--data", str(data), "--config", str(SYNTH_CONFIG), "--out", str(weights),
                 "--report", str(report)])
    elapsed = time.perf_counter() - start
    assert code == 0
    return {"root": root, "data": data, "weights": weights, "report": report, "train_seconds": elapsed}
