"""The acceptance battery, one test per criterion, each at its stated tolerance.

The battery runs once through the ``suite`` subcommand on default settings;
every test prints its criterion's pass/fail line and asserts the verdict.
"""

import csv
import json

import pytest

from degenerate_neumann import cli, suite

from conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def battery(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    status = cli.run("suite", out=str(out))
    with open(out / "suite.json") as fh:
        payload = json.load(fh)
    with open(out / "suite.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return status, payload, rows


def test_suite_on_defaults_exits_zero_with_full_summary(battery):
    status, payload, rows = battery
    assert status == 0
    assert [int(r["criterion"]) for r in rows] == list(range(1, 11))
    assert payload["subcommand"] == "suite"
    assert payload["config"]["suite"]["criteria"] == list(range(1, 11))


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(battery, number):
    _, payload, _ = battery
    entry = next(c for c in payload["criteria"] if c["number"] == number)
    res = suite.CriterionResult(entry["number"], entry["title"], entry["passed"], entry["metrics"],
                                note=entry["note"])
    line = res.line(timing=False)
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert entry["passed"], line
