import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from claimrank.errors import DataError, FormatError
from claimrank.index import (RankedList, build_index, load_index, save_index, search_many,
                             search_topk)


def random_index(n=50, d=8, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.choice(10 * n, size=n, replace=False)
    return build_index(zip(ids, rng.normal(size=(n, d)))), rng


class TestBuild:
    def test_shape(self):
        idx = build_index([(i, np.ones(4) * (i + 1)) for i in range(3)])
        assert (len(idx), idx.dim) == (3, 4)

    def test_rows_normalized(self):
        idx = build_index([(5, [2.0, 0.0])])
        np.testing.assert_allclose(idx.matrix, [[1.0, 0.0]])

    def test_insertion_order(self):
        idx = build_index([(9, [1, 0]), (2, [0, 1]), (5, [1, 1])])
        assert idx.ids.tolist() == [9, 2, 5]

    def test_duplicate_id(self):
        with pytest.raises(DataError, match=r"\b7\b"):
            build_index([(7, [1, 0]), (7, [0, 1])])

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="dimension"):
            build_index([(1, [1, 0]), (2, [0, 1, 0])])

    def test_zero_vector(self):
        with pytest.raises(DataError, match="zero embedding"):
            build_index([(1, [0, 0])])

    def test_empty(self):
        idx = build_index([], dim=3)
        assert len(idx) == 0
        assert search_topk(idx, np.ones(3), 5, post_id=4) == RankedList(4)


class TestSearch:
    def test_basis(self):
        idx = build_index([(10 + i, row) for i, row in enumerate(np.eye(4))])
        result = search_topk(idx, np.eye(4)[1], 1)
        assert result.hits == [(11, 1.0)]

    def test_k_larger_than_n(self):
        idx = build_index([(1, [1, 0]), (2, [0.6, 0.8]), (3, [0, 1])])
        result = search_topk(idx, [1, 0.1], 10)
        assert result.ids == [1, 2, 3]

    def test_ties_by_ascending_id(self):
        idx = build_index([(30, [1, 0]), (4, [1, 0]), (17, [1, 0]), (2, [0, 1])])
        assert search_topk(idx, [1, 0], 2).ids == [4, 17]
        assert search_topk(idx, [1, 0], 4).ids == [4, 17, 30, 2]

    def test_bad_k(self):
        idx, _ = random_index()
        with pytest.raises(ValueError):
            search_topk(idx, np.ones(8), 0)

    def test_query_dimension(self):
        idx, _ = random_index()
        with pytest.raises(DataError):
            search_topk(idx, np.ones(3), 1)

    @pytest.mark.parametrize("seed", range(4))
    def test_vs_bruteforce(self, seed):
        idx, rng = random_index(n=120, d=6, seed=seed)
        # duplicate rows so the tie rule is exercised
        idx.matrix[60:80] = idx.matrix[0:20]
        for _ in range(10):
            q = rng.normal(size=6) if rng.random() < 0.5 else idx.matrix[rng.integers(20)]
            k = int(rng.integers(1, 130))
            got = search_topk(idx, q, k).ids
            want = oracles.topk_bruteforce(idx.ids.tolist(), idx.matrix.tolist(), q.tolist(), k)
            assert got == want

    def test_full_k_is_sorted_permutation(self):
        idx, rng = random_index(n=40)
        res = search_topk(idx, rng.normal(size=8), 40)
        assert sorted(res.ids) == sorted(idx.ids.tolist())
        keys = [(-s, i) for i, s in res.hits]
        assert keys == sorted(keys)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 39))
    def test_prefix_monotone_and_bounded(self, seed, k):
        idx, rng = random_index(n=40, d=4, seed=seed % 7)
        q = np.random.default_rng(seed).normal(size=4)
        small, big = search_topk(idx, q, k), search_topk(idx, q, k + 1)
        assert big.hits[:k] == small.hits
        assert all(-1 - 1e-9 <= s <= 1 + 1e-9 for _, s in big.hits)

    def test_self_query(self):
        idx, _ = random_index(n=30)
        for row, fid in zip(idx.matrix, idx.ids):
            fid_top, score = search_topk(idx, row * 3.0, 1).hits[0]
            assert fid_top == fid and score >= 1 - 1e-9

    def test_threads_do_not_change_results(self):
        idx, rng = random_index(n=200)
        q = rng.normal(size=(25, 8))
        pids = list(range(25))
        assert search_many(idx, pids, q, 10, threads=1) == search_many(idx, pids, q, 10, threads=4)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        idx, rng = random_index()
        save_index(idx, tmp_path / "i.bin")
        back = load_index(tmp_path / "i.bin")
        assert back.ids.tobytes() == idx.ids.tobytes()
        assert back.matrix.tobytes() == idx.matrix.tobytes()
        q = rng.normal(size=8)
        assert search_topk(back, q, 10) == search_topk(idx, q, 10)
        save_index(back, tmp_path / "j.bin")
        assert (tmp_path / "i.bin").read_bytes() == (tmp_path / "j.bin").read_bytes()

    def test_layout(self, tmp_path):
        save_index(build_index([(3, [0.0, 2.0])]), tmp_path / "i.bin")
        raw = (tmp_path / "i.bin").read_bytes()
        assert struct.unpack_from("<4sIIQ", raw) == (b"BIDX", 1, 2, 1)
        assert struct.unpack_from("<Qdd", raw, 20) == (3, 0.0, 1.0)
        assert len(raw) == 20 + 8 + 16

    def test_bad_magic(self, tmp_path):
        idx, _ = random_index()
        save_index(idx, tmp_path / "i.bin")
        raw = bytearray((tmp_path / "i.bin").read_bytes())
        raw[:4] = b"XXXX"
        (tmp_path / "i.bin").write_bytes(raw)
        with pytest.raises(FormatError, match="bad magic"):
            load_index(tmp_path / "i.bin")

    def test_version(self, tmp_path):
        idx, _ = random_index()
        save_index(idx, tmp_path / "i.bin")
        raw = bytearray((tmp_path / "i.bin").read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        (tmp_path / "i.bin").write_bytes(raw)
        with pytest.raises(FormatError, match="version 9"):
            load_index(tmp_path / "i.bin")

    @pytest.mark.parametrize("cut", [3, 21, 100])
    def test_truncated(self, tmp_path, cut):
        idx, _ = random_index(n=5, d=4)
        save_index(idx, tmp_path / "i.bin")
        raw = (tmp_path / "i.bin").read_bytes()
        (tmp_path / "i.bin").write_bytes(raw[:cut])
        with pytest.raises(FormatError, match=rf"expected \d+ bytes, got {cut}"):
            load_index(tmp_path / "i.bin")
