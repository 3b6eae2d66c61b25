import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hrtf_dunet import report
from hrtf_dunet.errors import DataError


def test_single_row():
    s = report.box_stats([3.5])
    assert s["mean"] == 3.5 and s["sd"] == 0.0
    assert s["q1"] == s["median"] == s["q3"] == s["whisker_low"] == s["whisker_high"] == 3.5


def test_five_rows_by_hand(tmp_path):
    values = [4.0, 1.0, 10.0, 2.0, 3.0]
    rows = [(f"s{i}", "sh", 3, "lsd", v) for i, v in enumerate(values)]
    report.write_metrics(rows, tmp_path / "m.csv")
    s = report.summarize(report.read_metrics(tmp_path / "m.csv"))[0]
    # sorted 1 2 3 4 10: positions 1, 2 and 3 for q = 0.25, 0.5, 0.75
    assert (s["q1"], s["median"], s["q3"]) == (2.0, 3.0, 4.0)
    assert s["mean"] == 4.0
    assert s["sd"] == pytest.approx(np.sqrt(((np.array(values) - 4.0) ** 2).sum() / 4))
    # Tukey fences at 2 - 3 = -1 and 4 + 3 = 7: 10 is a flier
    assert (s["whisker_low"], s["whisker_high"]) == (1.0, 4.0)
    assert s["fliers"] == [10.0]


def test_quartile_interpolation_between_points():
    s = report.box_stats([1.0, 2.0, 3.0, 4.0])
    assert (s["q1"], s["median"], s["q3"]) == (1.75, 2.5, 3.25)


def test_identical_groups_identical_geometry():
    rows = [(f"s{i}", m, 4, "lsd", v) for m in ("a", "b") for i, v in enumerate([1.0, 5.0, 2.0])]
    a, b = report.summarize(rows)
    geom = ("n", "mean", "sd", "q1", "median", "q3", "whisker_low", "whisker_high")
    assert [a[k] for k in geom] == [b[k] for k in geom]


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_box_stats_ordering(values):
    s = report.box_stats(values)
    assert s["whisker_low"] <= s["q1"] + 1e-9
    assert s["q1"] <= s["median"] <= s["q3"]
    assert s["q3"] <= s["whisker_high"] + 1e-9
    assert min(values) <= s["whisker_low"] and s["whisker_high"] <= max(values)


def test_metrics_csv_sorted_and_exact(tmp_path):
    rows = [("b", "sh", 3, "lsd", 0.1), ("a", "sh", 27, "lsd", 1 / 3), ("a", "sh", 4, "ild", 2.0)]
    report.write_metrics(rows, tmp_path / "m.csv")
    back = report.read_metrics(tmp_path / "m.csv")
    assert [r[:3] for r in back] == [("a", "sh", 4), ("a", "sh", 27), ("b", "sh", 3)]
    assert back[1][4] == 1 / 3


def test_read_errors(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataError):
        report.read_metrics(tmp_path / "empty.csv")
    (tmp_path / "header.csv").write_text(",".join(report.METRIC_COLUMNS) + "\n")
    with pytest.raises(DataError):
        report.read_metrics(tmp_path / "header.csv")
    (tmp_path / "bad.csv").write_text(",".join(report.METRIC_COLUMNS) + "\ns,m,x,lsd,1\n")
    with pytest.raises(DataError):
        report.read_metrics(tmp_path / "bad.csv")
    with pytest.raises(DataError):
        report.read_metrics(tmp_path / "missing.csv")
    with pytest.raises(DataError):
        report.summarize([])


def test_report_outputs(tmp_path):
    rows = [(f"s{i}", m, k, metric, float(i + k))
            for i in range(4) for m in ("sh", "barycentric") for k in (27, 3)
            for metric in ("lsd", "ild")]
    report.write_metrics(rows, tmp_path / "m.csv")
    written = report.report(tmp_path / "m.csv", tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["boxplot_ild.svg", "boxplot_lsd.svg", "summary.csv", "table_ild.csv",
                     "table_lsd.csv"]
    table = list(csv.reader(open(tmp_path / "out" / "table_lsd.csv")))
    assert table[0] == ["method", "27", "3"]
    assert table[1] == ["barycentric", "28.50 (1.29)", "4.50 (1.29)"]
    svg = (tmp_path / "out" / "boxplot_lsd.svg").read_text()
    assert "LSD (dB)" in svg
    first = {p.name: p.read_bytes() for p in written}
    again = report.report(tmp_path / "m.csv", tmp_path / "out")
    assert {p.name: p.read_bytes() for p in again} == first


def test_magnitude_plot_labels(tmp_path):
    f = np.linspace(0, 24000, 129)
    report.magnitude_svg(tmp_path / "m.svg", f, {"reference": np.zeros(129), "noisy": np.ones(129)})
    text = (tmp_path / "m.svg").read_text()
    assert "Frequency (Hz)" in text and "Magnitude (dB)" in text
