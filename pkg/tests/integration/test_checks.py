#!/usr/bin/env python3
"""
Integration tests for the property suite
Each registered check in quick mode, plus registry behaviour
"""

import sys
import os

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from bdglab import checks
from bdglab.checks import CHECKS, CheckMeta, get_check_by_id, run_checks
from bdglab.errors import ConfigError, NotPSDError
from bdglab.settings import DEFAULT_MASTER_SEED

pytestmark = pytest.mark.integration


@pytest.mark.parametrize("check_id", [c.id for c in CHECKS])
def test_quick_check_passes(check_id):
    """Each property holds at quick sizes"""
    [result] = run_checks(DEFAULT_MASTER_SEED, workers=1, quick=True, only=[check_id])
    assert result.id == check_id
    assert result.passed, result.detail
    assert result.wall_ms >= 0.0


def test_registry():
    """Ids are unique and resolvable"""
    ids = [c.id for c in CHECKS]
    assert len(ids) == len(set(ids)) == 14
    assert get_check_by_id("domination").title
    with pytest.raises(ConfigError):
        get_check_by_id("nope")


def test_selection_keeps_requested_order():
    """--only runs the requested checks in the requested order"""
    results = run_checks(1, workers=1, quick=True, only=["ito_identity", "hilbert_identities"])
    assert [r.id for r in results] == ["ito_identity", "hilbert_identities"]


def test_raising_check_is_reported_as_failure(monkeypatch):
    """Library errors inside a check fail that check only"""
    def broken(ctx):
        raise NotPSDError("negative eigenvalue")

    monkeypatch.setattr(checks, "CHECKS", [CheckMeta("broken", "Always raises", broken)])
    [result] = run_checks(1, workers=1, quick=True)
    assert not result.passed
    assert "NotPSDError" in result.detail


if __name__ == "__main__":
    pytest.main([__file__])
