import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qslab.reports import LyapunovReport, SeriesEstimate, Verdict, parse_report, render_report

GOLDEN = """criterion: pointwise-drift
verdict: holds-on-range
range: 1..400
constant A: 0.0
constant B: 0.4999999999997272
note: LV(x) <= A - B W(x) verified at all 400 scanned states
"""


def test_golden_render():
    rep = LyapunovReport(
        criterion="pointwise-drift", verdict=Verdict.HOLDS, scan_range=(1, 400),
        constants={"A": 0.0, "B": 0.4999999999997272},
        notes=("LV(x) <= A - B W(x) verified at all 400 scanned states",))
    assert render_report(rep) == GOLDEN


def test_golden_parse():
    rep = parse_report(GOLDEN)
    assert rep.criterion == "pointwise-drift"
    assert rep.verdict is Verdict.HOLDS and rep.holds
    assert rep.scan_range == (1, 400)
    assert rep.constants["B"] == 0.4999999999997272  # repr round-trips exactly


names = st.text(
    alphabet=st.characters(whitelist_categories=("Ll",), whitelist_characters="_"),
    min_size=1, max_size=10)


@given(
    criterion=st.sampled_from(["summability", "pointwise-drift", "envelope-domination"]),
    verdict=st.sampled_from(list(Verdict)),
    lo=st.integers(1, 50), span=st.integers(0, 500),
    constants=st.dictionaries(names, st.floats(allow_nan=False, width=64), max_size=5),
    notes=st.lists(st.text(st.characters(blacklist_characters="\n:", blacklist_categories=("Cs", "Cc")), min_size=1).map(str.strip).filter(bool), max_size=3),
)
@settings(max_examples=120, deadline=None)
def test_render_parse_roundtrip(criterion, verdict, lo, span, constants, notes):
    rep = LyapunovReport(criterion=criterion, verdict=verdict,
                         scan_range=(lo, lo + span), constants=constants,
                         notes=tuple(notes))
    back = parse_report(render_report(rep))
    assert back.criterion == rep.criterion
    assert back.verdict == rep.verdict
    assert back.scan_range == rep.scan_range
    assert back.constants == rep.constants
    assert back.notes == rep.notes


def test_verdict_truthiness():
    assert Verdict.HOLDS
    assert not Verdict.FAILS
    assert not Verdict.INCONCLUSIVE


def test_constant_accessor_error():
    rep = LyapunovReport("x", Verdict.FAILS, (1, 2), {"A": 1.0})
    assert rep.constant("A") == 1.0
    with pytest.raises(KeyError):
        rep.constant("B")


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        parse_report("criterion: x\nverdict: holds-on-range\n")  # no range
    with pytest.raises(ValueError):
        parse_report("who: knows\n")


def test_series_estimate_float_protocol():
    est = SeriesEstimate(value=2.5, tail_bound=0.1, converged=True, terms_used=100)
    assert float(est) == 2.5
    assert not est.diverges
    assert math.isnan(est.ratio)
