import pytest

CRITERIA = {
    1: "equipartition scaling of beta with N",
    2: "enstrophy-bound heating",
    3: "velocity moment identities",
    4: "structure function shape",
    5: "oracle equivalence",
    6: "sampler invariants",
    7: "beta estimator calibration",
    8: "ensemble equivalence",
}
_results = {}
_collected = {"acceptance": False}


@pytest.fixture
def record_criterion():
    """record_criterion(n, passed, detail) stores one acceptance verdict for the summary."""
    def record(n, passed, detail):
        _results[n] = (bool(passed), detail)
        return passed
    return record


def pytest_collection_modifyitems(items):
    _collected["acceptance"] = any(item.path.name == "test_acceptance.py" for item in items)


def pytest_terminal_summary(terminalreporter):
    if not _collected["acceptance"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in _results:
            passed, detail = _results[n]
            tr.write_line(f"criterion {n} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        else:
            tr.write_line(f"criterion {n} [FAIL] {name}: no result (errored or not run)")
