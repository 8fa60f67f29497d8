from collections import Counter

import numpy as np
import pytest

from hdindex.borda import accumulate, borda_scores, read_owners, top_images
from hdindex.core import FormatError, HDIndexError

A, B = 100, 200


def test_single_slot():
    assert borda_scores([[7]], {7: A}, 1) == {A: 1}


def test_hand_case():
    table = borda_scores([[1, 2, 3]], {1: A, 2: B, 3: A}, 3)
    assert table[A] == 4 and table[B] == 2


def random_case(rng, n_results=20, k=10):
    owners = {d: int(rng.integers(0, 15)) for d in range(500)}
    results = [rng.choice(500, k, replace=False).tolist() for _ in range(n_results)]
    return results, owners


@pytest.mark.parametrize("seed", range(10))
def test_total_mass(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 20))
    n = int(rng.integers(1, 30))
    results, owners = random_case(rng, n, k)
    assert sum(borda_scores(results, owners, k).values()) == n * k * (k + 1) // 2


def test_incremental_equals_one_pass(rng):
    results, owners = random_case(rng)
    table = Counter()
    for r in results:
        accumulate(table, r, owners, 10)
    assert table == borda_scores(results, owners, 10)
    half = borda_scores(results[:7], owners, 10) + borda_scores(results[7:], owners, 10)
    assert half == table


def test_moving_up_a_slot_increases_score(rng):
    owners = {d: d % 5 for d in range(20)}
    result = list(rng.permutation(20)[:10])
    base = borda_scores([result], owners, 10)
    for slot in range(1, 10):
        moved = result.copy()
        moved[slot - 1], moved[slot] = moved[slot], moved[slot - 1]
        img, other = owners[result[slot]], owners[result[slot - 1]]
        if img != other:
            assert borda_scores([moved], owners, 10)[img] > base[img]


def test_top_images_ties_and_oracle(rng):
    assert top_images({5: 3}, 10) == [5]
    assert top_images({9: 4, 2: 4, 7: 1}, 2) == [2, 9]
    table = {i: int(rng.integers(0, 20)) for i in range(200)}
    oracle = sorted(table, key=lambda i: (-table[i], i))
    assert top_images(table, 25) == oracle[:25]


def test_unmapped_descriptor():
    with pytest.raises(HDIndexError):
        borda_scores([[1, 2]], {1: A}, 2)


def test_read_owners(tmp_path):
    (tmp_path / "o.txt").write_text("0 5\n1,6\n2\t5\n")
    assert read_owners(tmp_path / "o.txt") == {0: 5, 1: 6, 2: 5}
    np.array([[0, 5], [1, 6]], "<i8").tofile(tmp_path / "o.bin")
    assert read_owners(tmp_path / "o.bin") == {0: 5, 1: 6}
    (tmp_path / "bad.txt").write_text("0 5 1\n")
    with pytest.raises(FormatError):
        read_owners(tmp_path / "bad.txt")
