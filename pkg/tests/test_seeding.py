import hashlib

import pytest

from gainmap.seeding import derive_seed


def test_matches_direct_hash_construction():
    # independent reconstruction: first 8 little-endian bytes of
    # sha256("master/part1/part2")
    for master, path in [(0, ("x",)), (17, ("a", 3)), (2**40, ("s", "t", 0))]:
        tag = "/".join([str(master)] + [str(p) for p in path])
        expect = int.from_bytes(
            hashlib.sha256(tag.encode()).digest()[:8], "little"
        )
        assert derive_seed(master, *path) == expect


def test_deterministic_and_path_sensitive():
    assert derive_seed(5, "stage") == derive_seed(5, "stage")
    assert derive_seed(5, "stage") != derive_seed(6, "stage")
    assert derive_seed(5, "a") != derive_seed(5, "b")
    assert derive_seed(5, "a", 1) != derive_seed(5, "a", 2)
    assert derive_seed(5) != derive_seed(5, "")


def test_fits_in_64_bits():
    for s in range(20):
        assert 0 <= derive_seed(s, "k", s) < 2**64


def test_rejects_negative_master():
    with pytest.raises(ValueError):
        derive_seed(-1, "x")
