import math

import numpy as np
import pytest

from nilcavity.coupling import ControlSchedule, Segment, integrate_coefficients
from nilcavity.validation import (
    GROUPS,
    Check,
    checks_csv,
    quadrature_coefficients,
    run_validation,
    table_csv,
    weak_excitation_scan,
)


@pytest.mark.parametrize(
    "check,expected",
    [
        (Check("a", 1e-13, 1e-12), True),
        (Check("a", 1e-11, 1e-12), False),
        (Check("a", 0.995, 0.99, "min"), True),
        (Check("a", 0.98, 0.99, "min"), False),
        (Check("a", math.nan, 1.0), False),
        (Check("a", 3.0), None),
    ],
)
def test_check_verdicts(check, expected):
    assert check.passed is expected


def test_errata_csv_format():
    text = checks_csv([Check("x", 0.1, 1.0), Check("y", 2.0)])
    assert text.splitlines() == ["check,value,tolerance,pass", "x,0.10000000000000001,1,true", "y,2,,info"]


def test_quadrature_reference_matches_closed_form():
    s = ControlSchedule((Segment(0.7, 0.3, [1.0, -0.4]), Segment(0.5, -0.2, [0.2, 1.0])), 0.8, (-1.1, 0.5))
    c = integrate_coefficients(s)
    lin, bil = quadrature_coefficients(s)
    np.testing.assert_allclose(c.linear, lin, atol=1e-11)
    np.testing.assert_allclose(c.bilinear, bil, atol=1e-11)


def test_weak_scan_columns():
    rows = weak_excitation_scan([0.01, 0.03], N=2)
    assert list(rows[0]) == ["amplitude", "excitation", "fidelity"]
    assert rows[0]["fidelity"] > rows[1]["fidelity"]
    assert table_csv(rows).startswith("amplitude,excitation,fidelity\n")


def test_groups_are_independent_streams():
    a, _ = run_validation(4, ["gaussian_norm"])
    b, _ = run_validation(4, ["algebra", "gaussian_norm"])
    assert [c.row() for c in a] == [c.row() for c in b if c.name.startswith("gaussian")]


def test_unknown_group():
    with pytest.raises(ValueError):
        run_validation(0, ["nope"])
    assert "weak_excitation" in GROUPS
