"""Acceptance gate: one test per criterion at full size.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the observed value,
the tolerance and where it was measured. Tolerances live in
:mod:`agesir.acceptance` and are not relaxed here.
"""
import pytest

from agesir import acceptance

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("k", range(1, len(acceptance.CRITERIA) + 1))
def test_criterion(k, capsys):
    res = acceptance.CRITERIA[k - 1](quick=False)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
