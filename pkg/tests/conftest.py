import numpy as np
import pytest


def report(name: str, ok: bool, detail: str = "") -> None:
    """One pass/fail line per acceptance criterion, visible with ``pytest -s`` and in -v logs."""
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
