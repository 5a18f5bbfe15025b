import pytest

from bclab.experiments import CRITERIA, CriterionResult, regime_label, run_criterion


def test_regime_labels():
    assert regime_label(0.5, 2.0) == "SBE(S)"
    assert regime_label(0.5, 1.0) == "SBE(S_Dir)"
    assert regime_label(0.5, 0.5) == "SBE(S_Dir)+BC"
    assert regime_label(1.0, -1.0) == "OU(S_0)+BC"
    assert regime_label(0.75, -0.5) == "OU(S_Dir)+BC"


def test_result_needs_statistic_and_budget():
    ok = CriterionResult("x", "demo", True, 1.0, 2.0)
    slow = CriterionResult("x", "demo", True, 3.0, 2.0)
    wrong = CriterionResult("x", "demo", False, 1.0, 2.0)
    assert ok.passed and not slow.passed and not wrong.passed
    assert ok.line().startswith("PASS x") and "over budget" in slow.line() and wrong.line().startswith("FAIL")
    assert ok.as_dict()["passed"] is True


def test_registry_covers_ten_criteria():
    assert len(CRITERIA) == 10
    with pytest.raises(KeyError):
        run_criterion("nope")


def test_field_covariance_protocol_small():
    res = run_criterion("field_covariance", seed=3, samples=1500, n=16)
    assert res.statistic_ok and len(res.rows) == 3
