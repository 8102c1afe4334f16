import json

import pytest

from dfalearn.harness import _noisy_fit_window, rows_to_csv, write_bench_outputs


def test_fit_window_clean_labels_keeps_plain_floor():
    assert _noisy_fit_window(0.0) == (0.995, None)


@pytest.mark.parametrize("flip,floor,ceiling", [
    (0.01, 0.98, 1.0),
    (0.05, 0.94, 0.97),
    (0.10, 0.89, 0.92),
    (0.15, 0.84, 0.87),
])
def test_fit_window_brackets_expected_agreement(flip, floor, ceiling):
    got_floor, got_ceiling = _noisy_fit_window(flip)
    assert got_floor == pytest.approx(floor)
    assert got_ceiling == pytest.approx(ceiling)


def test_fit_window_extreme_rate_stays_sane():
    floor, ceiling = _noisy_fit_window(0.5)
    assert floor == 0.5
    assert ceiling == pytest.approx(0.52)


def test_rows_csv_pins_columns_and_newlines():
    rows = [{"target": "t", "q_max": 3, "seed": 0, "test_acc": 1.0, "dev_acc": 1.0,
             "q_hat": 2, "weights": 24, "seconds": 0.5, "stray": "dropped"}]
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "target,q_max,seed,test_acc,dev_acc,q_hat,weights,seconds"
    assert "\r" not in text
    assert "dropped" not in text


def test_write_bench_outputs_emits_tables_and_manifest(tmp_path):
    rows = [{"target": "t", "q_max": 3, "seed": 0, "test_acc": 1.0, "dev_acc": 1.0,
             "q_hat": 2, "weights": 24, "seconds": 0.5}]
    summary = [{"target": "t", "mean_test_acc": 1.0},
               {"target": "u", "mean_test_acc": 0.5, "note": "odd one"}]
    write_bench_outputs(tmp_path, "demo", rows, summary, {"command": "demo"})

    assert json.loads((tmp_path / "demo_summary.json").read_text()) == summary
    # aggregate CSV columns are the union of summary keys, first-seen order
    csv_lines = (tmp_path / "demo_summary.csv").read_text().splitlines()
    assert csv_lines[0] == "target,mean_test_acc,note"
    assert csv_lines[1] == "t,1.0,"
    manifest = json.loads((tmp_path / "demo_manifest.json").read_text())
    assert manifest["rows"] == "demo.csv"
    assert manifest["summary_csv"] == "demo_summary.csv"


def test_write_bench_outputs_with_empty_summary(tmp_path):
    write_bench_outputs(tmp_path, "empty", [], [], {})
    assert (tmp_path / "empty_summary.csv").read_text() == ""
