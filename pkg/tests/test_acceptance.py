"""Full-size acceptance protocols, one test per criterion.

Each protocol runs at its stated sample sizes and tolerance and must finish
inside its time budget. A one-line PASS/FAIL verdict per criterion is printed
at the end of the session (and by ``python tests/test_acceptance.py``).
"""
import pytest

from bclab.experiments import CRITERIA, run_criterion

RESULTS: dict = {}


@pytest.mark.acceptance
@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name):
    res = run_criterion(name, seed=0)
    RESULTS[name] = res
    print(res.line())
    for d in res.details:
        print("   ", d)
    assert res.statistic_ok, "\n".join([res.line(), *map(str, res.details)])
    assert res.seconds <= res.budget, res.line()


if __name__ == "__main__":
    ok = True
    for name in CRITERIA:
        res = run_criterion(name, seed=0)
        print(res.line(), flush=True)
        for d in res.details:
            print("   ", d, flush=True)
        ok &= res.passed
    raise SystemExit(0 if ok else 1)
