import pytest

from kbrw.errors import SolverError
from kbrw.runner.selftest import (
    CheckError,
    CheckRegistry,
    Settings,
    build_registry,
    check_calibration,
    check_exact_bands,
    check_green_bands,
    run_selftest,
)


def _settings(full=False):
    return Settings.load(seed=0, full=full, workers=1)


def test_registry_skips_full_only_checks_in_quick_mode():
    reg = CheckRegistry()
    reg.register("always", "passes", lambda s: {"passed": True, "value": 1})
    reg.register("heavy", "full scale only", lambda s: {"passed": False}, full_only=True)
    report = reg.run_all(_settings())
    assert report["passed"]
    statuses = {c["name"]: c["status"] for c in report["checks"]}
    assert statuses == {"always": "passed", "heavy": "skipped"}


def test_registry_reports_errors_and_failures():
    def broken(settings):
        raise SolverError("singular")

    reg = CheckRegistry()
    reg.register("broken", "raises", broken)
    reg.register("failing", "fails", lambda s: {"passed": False})
    report = reg.run_all(_settings())
    assert not report["passed"]
    broken_result, failing_result = report["checks"]
    assert broken_result["status"] == "error"
    assert broken_result["exit_code"] == 4
    assert failing_result["status"] == "failed"
    with pytest.raises(CheckError):
        reg.execute("missing", _settings())


def test_settings_read_acceptance_scale():
    assert _settings().reps_tail == 200000
    assert _settings(full=True).reps_tail == 10000000
    assert _settings(full=True).reps_overshoot == 10**6


def test_calibration_check_passes():
    assert check_calibration(_settings())["passed"]


def test_registry_contents():
    names = build_registry().names()
    assert names[0] == "calibration"
    assert "determinism" in names and "tail_band" in names


@pytest.mark.slow
def test_quick_selftest_passes():
    report = run_selftest(seed=0, full=False, workers=1)
    assert report["passed"], [c for c in report["checks"] if c["status"] != "passed"]


def test_erroring_check_is_logged_with_its_details(monkeypatch):
    from kbrw.runner import selftest

    warnings = []
    monkeypatch.setattr(selftest.run_logger, "log_warning",
                        lambda message, **details: warnings.append((message, details)))

    def broken(settings):
        raise SolverError("singular")

    reg = CheckRegistry()
    reg.register("broken", "raises", broken)
    result = reg.execute("broken", _settings())
    assert result["status"] == "error"
    assert result["message"] == "singular"
    assert warnings == [("selftest check broken error",
                         {"check": "broken", "details": {"error": "SolverError", "message": "singular",
                                                         "exit_code": 4}})]


def test_exact_moment_and_max_tail_bands():
    result = check_exact_bands(_settings())
    assert result["passed"], result["ratios"]
    assert set(result["ratios"]) == {"first_moment", "second_moment", "max_tail"}


def test_green_bands():
    result = check_green_bands(_settings())
    assert result["passed"], result["ratios"]
