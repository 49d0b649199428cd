"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run directly (``python tests/test_acceptance.py``) for the lines alone.
"""

import subprocess
import sys

import pytest

from sspembed import acceptance as acc

NUMBERS = list(range(1, len(acc.CRITERIA) + 1))


def line(record) -> str:
    verdict = "PASS" if record["passed"] else "FAIL"
    return f"criterion {record['criterion']:2d} {record['name']}: {verdict}"


@pytest.fixture(scope="module")
def records():
    return {r["criterion"]: r for r in acc.run_criteria()}


def report(record, capsys):
    with capsys.disabled():
        print("\n" + line(record))
    return record


def failure_details(record) -> str:
    return repr(record["details"])[:2000]


@pytest.mark.parametrize("number", NUMBERS)
def test_criterion(number, records, capsys):
    record = report(records[number], capsys)
    assert record["passed"], failure_details(record)


def acceptance_bytes() -> bytes:
    proc = subprocess.run([sys.executable, "-m", "sspembed.cli", "acceptance"], capture_output=True, check=False)
    assert proc.returncode in (0, 2), proc.stderr.decode()
    return proc.stdout


def test_criterion_12_determinism(capsys):
    first, second = acceptance_bytes(), acceptance_bytes()
    same = first == second and len(first) > 0
    report({"criterion": 12, "name": "determinism", "passed": same}, capsys)
    assert same


if __name__ == "__main__":
    result = acc.run_acceptance(determinism=True)
    for rec in result["criteria"]:
        print(line(rec))
    sys.exit(0 if result["passed"] else 1)
