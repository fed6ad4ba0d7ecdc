from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tboost.booster.errors import DataError
from tboost.booster.mot_io import (
    format_mot,
    make_row,
    parse_mot,
    read_features,
    read_mot_rows,
    write_features,
    write_mot,
)


def write(tmp_path, text, name="tracks.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_rows_keep_their_tokens(tmp_path):
    path = write(tmp_path, "1,7,10.5,20,30,60,0.93,-1,-1,-1\n1,3,0,0,5,5,1,-1,-1,-1\n2,7,11,20,30,60,0.9,-1,-1,-1\n")
    rows = read_mot_rows(path)
    assert [(r.frame, r.track_id, r.index) for r in rows] == [(1, 7, 0), (1, 3, 1), (2, 7, 0)]
    assert rows[0].tokens == ("10.5", "20", "30", "60", "0.93", "-1", "-1", "-1")
    assert_allclose(rows[0].box, [10.5, 20, 30, 60])
    assert rows[0].with_id(4).to_line() == "1,4,10.5,20,30,60,0.93,-1,-1,-1"


def test_six_column_rows_get_default_tail(tmp_path):
    rows = read_mot_rows(write(tmp_path, "3,1,1,2,3,4\n"))
    assert rows[0].to_line() == "3,1,1,2,3,4,1,-1,-1,-1"


def test_blank_lines_are_skipped(tmp_path):
    assert len(read_mot_rows(write(tmp_path, "1,1,0,0,1,1\n\n2,1,0,0,1,1\n"))) == 2


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1,1,0,0,1\n", "at least 6 columns"),
        ("1,1,a,0,1,1\n", "non-numeric"),
        ("1,1,0,0,-1,1\n", "negative box size"),
        ("1,1,0,0,nan,1\n", "non-finite"),
        ("1,1,0,0,1,1\n1,1,0,0,1,1\n", "duplicate row"),
    ],
)
def test_malformed_rows(tmp_path, text, fragment):
    with pytest.raises(DataError, match=fragment) as info:
        read_mot_rows(write(tmp_path, text))
    assert info.value.line is not None


def test_duplicate_reports_second_line(tmp_path):
    with pytest.raises(DataError) as info:
        read_mot_rows(write(tmp_path, "1,1,0,0,1,1\n2,1,0,0,1,1\n1,1,0,0,1,1\n"))
    assert info.value.line == 3


def test_write_orders_frame_major(tmp_path):
    rows = [make_row(2, 1, (0, 0, 1, 1)), make_row(1, 5, (0, 0, 1, 1)), make_row(1, 2, (0, 0, 1, 1))]
    assert [line.split(",")[:2] for line in format_mot(rows).splitlines()] == [["1", "2"], ["1", "5"], ["2", "1"]]
    path = tmp_path / "out" / "t.txt"
    write_mot(path, rows)
    tracks = parse_mot(path)
    assert list(tracks) == [1, 2, 5]
    assert make_row(1, 1, (1.234, 2, 3, 4)).tokens[:5] == ("1.23", "2.00", "3.00", "4.00", "1")


def test_features_roundtrip_and_validation(tmp_path):
    feats = {(1, 0): np.array([0.5, -1.25, 2.0]), (1, 1): np.array([0.0, 1.0, 3.0])}
    path = tmp_path / "f.jsonl"
    write_features(path, feats)
    back = read_features(path)
    assert set(back) == set(feats)
    assert back[(1, 0)].dtype == np.float32
    assert_allclose(back[(1, 1)], feats[(1, 1)])

    bad = write(tmp_path, '{"frame": 1, "index": 0, "feature": [1, 2]}\n{"frame": 2, "index": 0, "feature": [1]}\n', "b.jsonl")
    with pytest.raises(DataError, match="expected 2"):
        read_features(bad)
    dup = write(tmp_path, '{"frame": 1, "index": 0, "feature": [1]}\n{"frame": 1, "index": 0, "feature": [2]}\n', "d.jsonl")
    with pytest.raises(DataError, match="duplicate feature"):
        read_features(dup)
    missing = write(tmp_path, '{"frame": 1, "feature": [1]}\n', "m.jsonl")
    with pytest.raises(DataError, match="bad feature record"):
        read_features(missing)
