import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reliefkit.cli import main  # noqa: E402

# criterion id -> (title, outcome)
_ACCEPTANCE: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", tuple(m.args)))


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    cid, title = marker
    entry = _ACCEPTANCE.setdefault(cid, [title, "PASS"])
    if report.failed:
        entry[1] = "FAIL"


def _key(cid):
    num = "".join(ch for ch in cid if ch.isdigit())
    return int(num), cid


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=_key):
        title, outcome = _ACCEPTANCE[cid]
        tr.write_line(f"criterion {cid:<3} {outcome:<4}  {title}")


def run_cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Desk profile, seed 7, full pipeline twice through the command line."""
    runs = []
    for name in ("run1", "run2"):
        root = tmp_path_factory.mktemp(name)
        t = {}
        t0 = time.perf_counter()
        assert run_cli("generate", "--profile", "desk", "--seed", 7, "--workers", 1, "--out", root / "data") == 0
        t["generate"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        assert run_cli("segment", "--seed", 7, "--workers", 1, "--data", root / "data", "--out", root / "seg",
                       "--splits", "query,retrieval,training") == 0
        t["segment"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        assert run_cli("retrieve", "--workers", 1, "--data", root / "data", "--labels", root / "seg" / "labels",
                       "--out", root / "membership-signature.csv") == 0
        t["retrieve"] = time.perf_counter() - t0
        assert run_cli("evaluate", "--membership", root / "membership-signature.csv", "--truth", root / "data",
                       "--out", root / "eval") == 0
        runs.append({"root": root, "times": t})
    return runs
