import struct

import numpy as np
import pytest

from hdindex.core import Dataset, DimensionMismatchError, DomainError, FormatError
from hdindex.evaluation import exact_knn
from hdindex.ingest import deduplicate, read_vecs, reserve_queries, scale_to_integer, write_vecs

from conftest import TABLE1, obj


def test_empty_file(tmp_path):
    (tmp_path / "e.fvecs").write_bytes(b"")
    assert read_vecs(tmp_path / "e.fvecs").n == 0


def test_single_record(tmp_path):
    path = tmp_path / "o1.fvecs"
    path.write_bytes(struct.pack("<i4f", 4, *TABLE1[obj(1)]))
    d = read_vecs(path)
    assert d.n == 1 and d.dim == 4 and d.ids.tolist() == [0]
    np.testing.assert_allclose(d.coords[0], [0.20, 0.74, 0.68, 0.73], rtol=1e-6)


@pytest.mark.parametrize("kind,suffix", [("f", ".fvecs"), ("b", ".bvecs"), ("i", ".ivecs")])
def test_roundtrip_bytes(tmp_path, rng, kind, suffix):
    if kind == "f":
        coords = rng.random((1000, 24)).astype(np.float32)
    elif kind == "b":
        coords = rng.integers(0, 256, (1000, 24))
    else:
        coords = rng.integers(-2**31, 2**31 - 1, (1000, 24))
    a, b = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
    write_vecs(a, coords.astype(np.float64))
    d = read_vecs(a)
    write_vecs(b, d)
    assert a.read_bytes() == b.read_bytes()
    assert a.stat().st_size == 1000 * (4 + 24 * {"f": 4, "b": 1, "i": 4}[kind])
    np.testing.assert_array_equal(d.coords, coords.astype(np.float64))


def test_byte_domain_default(tmp_path):
    write_vecs(tmp_path / "x.bvecs", np.array([[3.0, 9.0]]))
    assert read_vecs(tmp_path / "x.bvecs").domain == (0.0, 255.0)


def test_errors(tmp_path):
    good = struct.pack("<i2f", 2, 1.0, 2.0)
    (tmp_path / "t.fvecs").write_bytes(good + good[:-2])
    with pytest.raises(FormatError):
        read_vecs(tmp_path / "t.fvecs")
    (tmp_path / "m.fvecs").write_bytes(good + struct.pack("<i2f", 3, 1.0, 2.0))
    with pytest.raises(DimensionMismatchError):
        read_vecs(tmp_path / "m.fvecs")
    with pytest.raises(FormatError):
        read_vecs(tmp_path / "t.dat")
    with pytest.raises(DomainError):
        write_vecs(tmp_path / "x.bvecs", np.array([[300.0]]))


class TestDeduplicate:
    def test_no_duplicates_is_identity(self, rng):
        d = Dataset(rng.random((50, 3)))
        out = deduplicate(d)
        np.testing.assert_array_equal(out.coords, d.coords)
        assert out.ids.tolist() == list(range(50))

    def test_all_identical(self):
        assert deduplicate(Dataset(np.ones((9, 4)))).n == 1

    def test_set_oracle_and_idempotent(self, rng):
        base = rng.integers(0, 4, (400, 3)).astype(float)
        d = Dataset(base)
        out = deduplicate(d)
        seen, first = set(), []
        for row in map(tuple, base.tolist()):
            if row not in seen:
                seen.add(row)
                first.append(row)
        assert list(map(tuple, out.coords.tolist())) == first
        assert out.ids.tolist() == list(range(len(first)))
        again = deduplicate(out)
        np.testing.assert_array_equal(again.coords, out.coords)


class TestScale:
    def test_identity_on_integers(self):
        d = Dataset(np.array([[1.0, 5.0], [3.0, -2.0]]))
        np.testing.assert_array_equal(scale_to_integer(d, 1).coords, d.coords)

    def test_hundred(self):
        out = scale_to_integer(Dataset(np.array([[0.18, 0.87]]), domain=(0, 1)), 100)
        assert out.coords.tolist() == [[18.0, 87.0]]
        assert out.domain == (0.0, 100.0)

    def test_overflow_names_record(self):
        d = Dataset(np.array([[1.0], [3e5]]), ids=[10, 11])
        with pytest.raises(DomainError, match="record 11"):
            scale_to_integer(d, 1e5)
        with pytest.raises(DomainError):
            scale_to_integer(d, 0)

    def test_neighbour_order_preserved(self, rng):
        d = Dataset(rng.random((10_000, 8)))
        queries = rng.random((20, 8))
        scaled = scale_to_integer(d, 1e4)
        for q in queries:
            qs = np.rint(q * 1e4)
            assert exact_knn(scaled, qs, 10).ids == exact_knn(d, q, 10).ids


def test_reserve_queries(rng):
    d = Dataset(rng.random((100, 3)))
    base, queries = reserve_queries(d, 10, seed=1)
    assert (base.n, queries.n) == (90, 10)
    rows = set(map(tuple, base.coords.tolist()))
    assert not rows & set(map(tuple, queries.coords.tolist()))
    assert base.ids.tolist() == list(range(90))
    again = reserve_queries(d, 10, seed=1)[1]
    np.testing.assert_array_equal(again.coords, queries.coords)
    with pytest.raises(DomainError):
        reserve_queries(d, 101)
