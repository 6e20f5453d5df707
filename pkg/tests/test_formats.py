import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tenrmot.errors import InputError
from tenrmot.formats import TrackFile, TrackRecord, loads, rle_decode, rle_encode

EXAMPLE = """# tenrmot-tracks v1
# expression: red circles
# frames: 2
# frame_size: 64x64
# mask_size: 4x4
frame,id,x,y,w,h,conf,ref,mask
0,1,10.00,12.00,14.00,14.00,1.0000,1.0000,5 2 2 2 5
1,1,11.00,12.00,14.00,14.00,0.9000,0.8000,
"""


def test_rle_hand_case():
    m = np.zeros((2, 3), bool)
    m[0, 1] = m[1, 0] = m[1, 1] = True
    assert rle_encode(m) == "1 1 1 2 1"


def test_rle_leading_foreground():
    assert rle_encode(np.ones((1, 3), bool)) == "0 3"


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_rle_round_trip(h, w, seed):
    m = np.random.default_rng(seed).random((h, w)) > 0.5
    np.testing.assert_array_equal(rle_decode(rle_encode(m), (h, w)), m)


def test_rle_rejects_wrong_total():
    with pytest.raises(InputError):
        rle_decode("3 4", (2, 2))


def test_parse_example():
    tf = loads(EXAMPLE)
    assert tf.expression == "red circles" and tf.frames == 2 and tf.mask_size == (4, 4)
    assert tf.records[0].mask.sum() == 4 and tf.records[1].mask is None
    assert tf.records[1].conf == 0.9


def test_dump_round_trip_is_byte_identical():
    assert loads(EXAMPLE).dumps() == EXAMPLE


def test_records_are_written_in_frame_id_order():
    tf = TrackFile("x", 2, records=[TrackRecord(1, 2, np.zeros(4)), TrackRecord(0, 5, np.zeros(4)),
                                    TrackRecord(1, 1, np.zeros(4))])
    body = tf.dumps().splitlines()[6:]
    assert [tuple(line.split(",")[:2]) for line in body] == [("0", "5"), ("1", "1"), ("1", "2")]


def test_empty_body():
    tf = loads("\n".join(EXAMPLE.splitlines()[:6]) + "\n")
    assert tf.records == [] and tf.to_trajectories().num_frames == 2


@pytest.mark.parametrize("bad, line", [
    ("0,1,a,12,14,14,1,1,", 8),
    ("0,1,10,12", 8),
    ("0,1,10,12,14,14,1,1,3 3", 8),
    ("-1,1,10,12,14,14,1,1,", 8),
])
def test_malformed_lines_report_line_number(bad, line):
    text = EXAMPLE.replace("1,1,11.00,12.00,14.00,14.00,0.9000,0.8000,", bad)
    with pytest.raises(InputError, match=f"line {line}"):
        loads(text)


def test_missing_header():
    with pytest.raises(InputError, match="line 1"):
        loads("frame,id\n")


def test_bad_frame_count():
    with pytest.raises(InputError, match="line 3"):
        loads(EXAMPLE.replace("# frames: 2", "# frames: two"))


def test_duplicate_record():
    with pytest.raises(InputError):
        loads(EXAMPLE + "1,1,0,0,1,1,1,1,\n")
