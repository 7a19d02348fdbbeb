import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from penguin.io import (FormatError, Task, WaveformRecord, decode_record, encode_record, read_delimited_text,
                        read_record, split_subjects, stack_pairs, window_pairs, window_starts, write_record)


def rec(**chans):
    return WaveformRecord("s01", Task.ECG, 128.0, chans)


def test_empty_channel_roundtrip(tmp_path):
    r = rec(ppg=np.zeros(0))
    write_record(r, tmp_path / "a.vsr")
    back = read_record(tmp_path / "a.vsr")
    assert back == r and back.n_samples == 0


def test_known_values_roundtrip(tmp_path):
    r = rec(ppg=[1.0, -2.5, 3.25, 0.0], ecg=[-0.0, 1e-30, 7.0, -1e30])
    write_record(r, tmp_path / "a.vsr")
    back = read_record(tmp_path / "a.vsr")
    assert back == r
    assert back.labels == ["ppg", "ecg"]


def test_negative_zero_is_bitwise_distinct():
    assert rec(ppg=[0.0]) != rec(ppg=[-0.0])


def test_fuzz_roundtrip():
    rng = np.random.default_rng(1234)
    for i in range(10):
        n_ch = int(rng.integers(1, 5))
        n = int(rng.integers(0, 300))
        chans = {f"c{j}": rng.standard_normal(n) * 10 ** rng.uniform(-5, 5) for j in range(n_ch)}
        r = WaveformRecord(f"subj-{i}-é", Task(int(rng.integers(0, 3))), float(rng.uniform(1, 1000)), chans)
        assert decode_record(encode_record(r)) == r


def test_header_layout():
    buf = encode_record(WaveformRecord("ab", Task.ABP, 125.0, {"abp": [1.0, 2.0]}))
    assert buf[:4] == b"VSR1"
    version, task, fs = struct.unpack_from("<HBd", buf, 4)
    assert (version, task, fs) == (1, 2, 125.0)
    assert buf[-8:] == struct.pack("<2f", 1.0, 2.0)


def test_bad_magic(tmp_path):
    buf = bytearray(encode_record(rec(ppg=[1.0])))
    buf[:4] = b"XXXX"
    (tmp_path / "x.vsr").write_bytes(bytes(buf))
    with pytest.raises(FormatError, match="magic"):
        read_record(tmp_path / "x.vsr")


def test_truncated_payload():
    buf = encode_record(rec(ppg=[1.0, 2.0, 3.0]))
    with pytest.raises(FormatError, match="truncat"):
        decode_record(buf[:-4])


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        decode_record(encode_record(rec(ppg=[1.0])) + b"\0")


def test_nan_rejected():
    with pytest.raises(ValueError, match="NaN"):
        rec(ppg=[1.0, np.nan])


def test_unequal_lengths_rejected():
    with pytest.raises(ValueError, match="unequal"):
        rec(ppg=[1.0, 2.0], ecg=[1.0])


def test_delimited_text(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,ppg,ecg\n0,1,2\n1,3,4\n2,5,6\n")
    r = read_delimited_text(p, 64.0, ["ppg", "ecg"], "s", "ecg")
    assert r.labels == ["ppg", "ecg"] and r.n_samples == 3
    np.testing.assert_array_equal(r.channel("ecg"), [2, 4, 6])


def test_delimited_text_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("ppg,ecg\n1,2\n")
    with pytest.raises(FormatError, match="abp"):
        read_delimited_text(p, 64.0, ["ppg", "abp"], "s", "abp")


def test_delimited_text_nan_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("ppg,ecg\n1,2\n3,NaN\n")
    with pytest.raises(FormatError, match=r"row 3, column 'ecg'"):
        read_delimited_text(p, 64.0, ["ppg", "ecg"], "s", "ecg")


@pytest.mark.parametrize("n, sizes", [(8, (6, 1, 1)), (3, (1, 1, 1)), (16, (12, 2, 2))])
def test_split_sizes(n, sizes):
    assert split_subjects([f"s{i}" for i in range(n)], (6, 1, 1), seed=0).sizes == sizes


def test_split_disjoint_and_deterministic():
    ids = [f"s{i}" for i in range(10)]
    a = split_subjects(ids, (6, 1, 1), 3)
    assert a == split_subjects(ids, (6, 1, 1), 3)
    assert sorted(a.train_subjects + a.val_subjects + a.test_subjects) == sorted(ids)
    assert len({split_subjects(ids, (6, 1, 1), s) for s in range(6)}) > 1


def test_split_rejects_too_few():
    with pytest.raises(ValueError):
        split_subjects(["a", "b"], (6, 1, 1))


@given(n=st.integers(3, 40), seed=st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_split_is_partition(n, seed):
    ids = [f"s{i}" for i in range(n)]
    s = split_subjects(ids, (6, 1, 1), seed)
    parts = [set(s.train_subjects), set(s.val_subjects), set(s.test_subjects)]
    assert all(parts) and set().union(*parts) == set(ids) and sum(map(len, parts)) == n


def test_window_offsets():
    assert list(window_starts(10, 4, 3)) == [0, 3, 6]
    assert list(window_starts(4, 4, 1)) == [0]
    assert len(window_starts(7680, 1024, 1024)) == 7


def test_window_too_long():
    with pytest.raises(ValueError):
        window_starts(3, 4, 1)


def test_window_pairs_content():
    r = rec(ppg=np.arange(10.0), ecg=-np.arange(10.0))
    pairs = window_pairs(r, "ppg", "ecg", 4, 3)
    assert [p.start_index for p in pairs] == [0, 3, 6]
    np.testing.assert_array_equal(pairs[2].ppg, [6, 7, 8, 9])
    ppg, tgt = stack_pairs(pairs)
    assert ppg.shape == (3, 4)
    np.testing.assert_array_equal(tgt, -ppg)


def test_task_parse():
    assert Task.parse("Resp") is Task.RESP and Task.parse(2) is Task.ABP
    with pytest.raises(ValueError):
        Task.parse("eeg")
