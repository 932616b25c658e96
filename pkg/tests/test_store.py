import io
import struct
import tarfile
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsense.matrix import TrafficMatrix
from netsense.store import (
    BadMagic,
    Malformed,
    MemberError,
    NonContiguousWindows,
    StoreLayout,
    UnsupportedVersion,
    read_group,
    read_matrix,
    write_group,
    write_matrix,
)


def random_matrix(rng, index, nnz=None, span=1 << 32):
    nnz = int(rng.integers(0, 40)) if nnz is None else nnz
    rows = rng.integers(0, span, nnz, dtype=np.uint64)
    cols = rng.integers(0, span, nnz, dtype=np.uint64)
    counts = rng.integers(1, 1 << 20, nnz, dtype=np.uint64)
    entries = {}
    for r, c, n in zip(rows.tolist(), cols.tolist(), counts.tolist()):
        entries[(r, c)] = n
    return TrafficMatrix.from_entries(entries, index)


class TestTmx:
    def test_empty_is_header_only(self):
        data = write_matrix(TrafficMatrix.empty(0))
        assert len(data) == 32
        assert data[:4] == b"TMX1"
        assert struct.unpack("<IIIQQ", data[4:]) == (1, 0, 0, 0, 0)

    def test_single_entry_layout(self):
        data = write_matrix(TrafficMatrix.from_entries({(1, 2): 3}, 5))
        assert len(data) == 48
        assert struct.unpack("<QQ", data[16:32]) == (5, 1)
        assert struct.unpack("<IIQ", data[32:]) == (1, 2, 3)

    def test_aggregate_sentinel(self):
        data = write_matrix(TrafficMatrix.from_entries({(1, 2): 3}, None))
        assert data[16:24] == b"\xff" * 8
        assert read_matrix(data).is_aggregate

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            read_matrix(b"XXXX" + bytes(28))
        with pytest.raises(BadMagic):
            read_matrix(b"XXXX")

    def test_unsupported_version(self):
        data = bytearray(write_matrix(TrafficMatrix.empty(0)))
        data[4] = 2
        with pytest.raises(UnsupportedVersion):
            read_matrix(bytes(data))

    def test_short_body(self):
        two = write_matrix(TrafficMatrix.from_entries({(1, 2): 3, (1, 3): 4}, 0))
        with pytest.raises(Malformed):
            read_matrix(two[:-16])

    def test_trailing_bytes(self):
        with pytest.raises(Malformed):
            read_matrix(write_matrix(TrafficMatrix.from_entries({(1, 2): 3}, 0)) + b"\x00")

    def test_partial_triple(self):
        with pytest.raises(Malformed):
            read_matrix(write_matrix(TrafficMatrix.from_entries({(1, 2): 3}, 0))[:-3])

    def test_unsorted(self):
        header = struct.pack("<4sIIIQQ", b"TMX1", 1, 0, 0, 0, 2)
        body = struct.pack("<IIQ", 5, 0, 1) + struct.pack("<IIQ", 4, 0, 1)
        with pytest.raises(Malformed):
            read_matrix(header + body)

    def test_duplicate(self):
        header = struct.pack("<4sIIIQQ", b"TMX1", 1, 0, 0, 0, 2)
        body = struct.pack("<IIQ", 4, 0, 1) * 2
        with pytest.raises(Malformed):
            read_matrix(header + body)

    def test_zero_count(self):
        header = struct.pack("<4sIIIQQ", b"TMX1", 1, 0, 0, 0, 1)
        with pytest.raises(Malformed):
            read_matrix(header + struct.pack("<IIQ", 4, 0, 0))

    def test_short_header(self):
        with pytest.raises(Malformed):
            read_matrix(b"TMX1" + bytes(10))

    def test_randomized_round_trip(self, rng):
        for k in range(200):
            m = random_matrix(rng, k)
            data = write_matrix(m)
            assert len(data) == 32 + 16 * m.nnz
            assert read_matrix(data) == m
            assert write_matrix(read_matrix(data)) == data


@settings(max_examples=100, deadline=None)
@given(
    entries=st.dictionaries(
        st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1)), st.integers(1, 2**64 - 1), max_size=30
    ),
    index=st.one_of(st.none(), st.integers(0, 2**64 - 2)),
)
def test_round_trip_property(entries, index):
    m = TrafficMatrix.from_entries(entries, index)
    assert read_matrix(write_matrix(m)) == m


class TestGroups:
    def test_ceil_grouping(self, tmp_path, rng):
        ms = [random_matrix(rng, k) for k in range(5)]
        paths = write_group(ms, StoreLayout(tmp_path, 2))
        assert [p.name for p in paths] == [
            "tm_00000000_00000001.tar", "tm_00000002_00000003.tar", "tm_00000004_00000004.tar"
        ]
        sizes = []
        for p in paths:
            with tarfile.open(p) as tar:
                sizes.append(len(tar.getnames()))
        assert sizes == [2, 2, 1]
        assert list(read_group(paths)) == ms

    def test_one_matrix(self, tmp_path, rng):
        paths = write_group([random_matrix(rng, 0)], StoreLayout(tmp_path))
        assert len(paths) == 1
        with tarfile.open(paths[0]) as tar:
            assert tar.getnames() == ["tm_00000000.tmx"]

    def test_member_metadata_fixed(self, tmp_path, rng):
        (path,) = write_group([random_matrix(rng, 0), random_matrix(rng, 1)], StoreLayout(tmp_path))
        with tarfile.open(path) as tar:
            for info in tar.getmembers():
                assert (info.mtime, info.uid, info.gid, info.uname, info.gname, info.mode) == (0, 0, 0, "", "", 0o644)

    def test_empty_input(self, tmp_path):
        with pytest.raises(ValueError):
            write_group([], StoreLayout(tmp_path))

    def test_out_of_order_input(self, tmp_path, rng):
        with pytest.raises(ValueError):
            write_group([random_matrix(rng, 1), random_matrix(rng, 0)], StoreLayout(tmp_path))

    def test_byte_identical(self, tmp_path, rng):
        ms = [random_matrix(rng, k) for k in range(7)]
        a = write_group(ms, StoreLayout(tmp_path / "a", 3))
        b = write_group(ms, StoreLayout(tmp_path / "b", 3))
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_archives_out_of_order(self, tmp_path, rng):
        ms = [random_matrix(rng, k) for k in range(10)]
        paths = write_group(ms, StoreLayout(tmp_path, 3))
        assert list(read_group(paths[::-1])) == ms

    def test_ustar_format(self, tmp_path, rng):
        (path,) = write_group([random_matrix(rng, 0)], StoreLayout(tmp_path))
        assert path.read_bytes()[257:263] == b"ustar\x00"

    def test_non_contiguous_warns(self, tmp_path, rng):
        a = write_group([random_matrix(rng, 0), random_matrix(rng, 1)], StoreLayout(tmp_path / "a"))
        b = write_group([random_matrix(rng, 5)], StoreLayout(tmp_path / "b"))
        with pytest.warns(NonContiguousWindows):
            got = list(read_group(a + b))
        assert [m.window_index for m in got] == [0, 1, 5]

    def test_contiguous_is_quiet(self, tmp_path, rng):
        paths = write_group([random_matrix(rng, k) for k in range(4)], StoreLayout(tmp_path, 2))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            list(read_group(paths))

    def test_corrupted_member_named(self, tmp_path, rng):
        ms = [random_matrix(rng, k, nnz=3) for k in range(64)]
        (path,) = write_group(ms, StoreLayout(tmp_path))
        victim = "tm_00000037.tmx"
        data = bytearray(path.read_bytes())
        with tarfile.open(path) as tar:
            offset = tar.getmember(victim).offset_data
        data[offset] ^= 0xFF  # first magic byte
        path.write_bytes(bytes(data))

        yielded = []
        with pytest.raises(MemberError) as err:
            for m in read_group([path]):
                yielded.append(m)
        assert err.value.member == victim
        assert err.value.archive == str(path)
        assert victim in str(err.value)
        assert isinstance(err.value.cause, BadMagic)
        assert yielded == ms[:37]

    def test_foreign_member_name_uses_header(self, tmp_path, rng):
        m = random_matrix(rng, 3)
        path = tmp_path / "x.tar"
        with tarfile.open(path, "w", format=tarfile.USTAR_FORMAT) as tar:
            data = write_matrix(m)
            info = tarfile.TarInfo("matrix-three.bin")
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
        assert list(read_group([path])) == [m]

    def test_group_round_trip_many(self, tmp_path, rng):
        ms = [random_matrix(rng, k) for k in range(130)]
        paths = write_group(iter(ms), StoreLayout(tmp_path, 64))
        assert len(paths) == 3
        assert list(read_group(paths)) == ms
