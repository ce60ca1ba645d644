"""Acceptance suite: every criterion at its stated tolerance, one line each.

These call the same check functions bundled behind `fbse selftest`.
"""

import pytest

from fbse import selftest


@pytest.mark.parametrize("name,check", selftest.CRITERIA, ids=[n for n, _ in selftest.CRITERIA])
def test_criterion(name, check):
    passed, detail = check()
    print(f"\nCRITERION {name}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"{name}: {detail}"
