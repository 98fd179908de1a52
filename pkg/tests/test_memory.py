from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmm.errors import ContractError, FormatError, RetrievalError
from rmm.memory import (
    DEFAULT_CAPACITY,
    DEFAULT_ETA,
    DEFAULT_MARGIN,
    MemoryBank,
    bank_stats,
    knn_retrieve,
    memory_update,
    wavelet_kl,
    wmm_loss,
)
from rmm.tensor import Tensor, backward


def unit(v):
    return v / np.linalg.norm(v)


def random_bank(r, cap, dk=8, dv=5, fill=None):
    bank = MemoryBank(cap, dk, dv)
    n = cap if fill is None else fill
    for i in r.choice(cap, n, replace=False):
        bank.keys[i] = unit(r.normal(size=dk))
        bank.values[i] = r.normal(size=dv)
        bank.occupied[i] = True
    return bank


def brute_force(bank, q, k):
    q = q / np.linalg.norm(q)
    scored = [(-float(bank.keys[i] @ q), i) for i in range(bank.capacity) if bank.occupied[i]]
    scored.sort()
    return [i for _, i in scored[:k]]


def kl_decimal(v, z):
    getcontext().prec = 60
    ev = [Decimal(float(x)).exp() for x in v]
    ez = [Decimal(float(x)).exp() for x in z]
    pv = [e / sum(ev) for e in ev]
    pz = [e / sum(ez) for e in ez]
    return float(sum(p * (p / q).ln() for p, q in zip(pv, pz)))


def test_published_defaults():
    assert DEFAULT_CAPACITY == 982
    assert DEFAULT_MARGIN == 0.1
    assert DEFAULT_ETA == 0.7
    assert MemoryBank().capacity == 982


class TestRetrieve:
    def test_self_similarity(self, rng):
        bank = random_bank(rng, 10)
        (slot, sim), = knn_retrieve(bank, bank.keys[3], 1)
        assert slot == 3 and sim == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_pair(self):
        bank = MemoryBank(2, 2, 1)
        bank.keys[:] = np.eye(2)
        bank.occupied[:] = True
        res = knn_retrieve(bank, np.array([1.0, 0.0]), 2)
        assert [s for s, _ in res] == [0, 1]
        assert res[0][1] == pytest.approx(1.0) and res[1][1] == pytest.approx(0.0)

    def test_full_bank_k5(self, rng):
        bank = random_bank(rng, 982, dk=64)
        q = rng.normal(size=64)
        assert [s for s, _ in knn_retrieve(bank, q, 5)] == brute_force(bank, q, 5)

    def test_ties_prefer_lower_index(self):
        bank = MemoryBank(4, 2, 1)
        bank.keys[1] = bank.keys[3] = [1.0, 0.0]
        bank.occupied[[1, 3]] = True
        assert knn_retrieve(bank, np.array([1.0, 0.0]), 1)[0][0] == 1

    def test_empty_bank(self):
        with pytest.raises(RetrievalError):
            knn_retrieve(MemoryBank(3, 2, 1), np.ones(2), 1)

    def test_k_too_large(self, rng):
        with pytest.raises(RetrievalError):
            knn_retrieve(random_bank(rng, 4, fill=2), np.ones(8), 3)

    def test_zero_query(self, rng):
        with pytest.raises(ContractError):
            knn_retrieve(random_bank(rng, 4), np.zeros(8), 1)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        cap = int(r.integers(1, 40))
        bank = random_bank(r, cap, fill=int(r.integers(1, cap + 1)))
        k = int(r.integers(1, len(bank) + 1))
        q = r.normal(size=8)
        assert [s for s, _ in knn_retrieve(bank, q, k)] == brute_force(bank, q, k)


class TestKL:
    def test_identical(self, rng):
        v = rng.normal(size=7)
        assert wavelet_kl(v, v) == 0.0

    def test_shift_invariant(self, rng):
        v = rng.normal(size=7)
        assert wavelet_kl(v + 3.5, v) < 1e-15

    def test_two_point_against_decimal(self):
        assert wavelet_kl([1.0, 0.0], [0.0, 1.0]) == pytest.approx(kl_decimal([1, 0], [0, 1]),
                                                                 rel=1e-13)

    def test_random_against_decimal(self, rng):
        v, z = rng.normal(size=(2, 12))
        assert wavelet_kl(v, z) == pytest.approx(kl_decimal(v, z), rel=1e-12)

    def test_temperature_scales_inputs(self, rng):
        v, z = rng.normal(size=(2, 6))
        assert wavelet_kl(v, z, 2.0) == pytest.approx(wavelet_kl(v / 2, z / 2), rel=1e-14)

    def test_errors(self):
        with pytest.raises(ContractError):
            wavelet_kl(np.ones(3), np.ones(4))
        with pytest.raises(ContractError):
            wavelet_kl(np.ones(3), np.ones(3), 0.0)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10))
    def test_non_negative(self, seed, t):
        v, z = np.random.default_rng(seed).normal(0, 5, size=(2, 9))
        assert wavelet_kl(v, z, t) >= 0.0


def triplet_bank(sim_pos, sim_neg):
    """Slot 0 passes the KL gate, slot 1 fails it; q = e0."""
    bank = MemoryBank(2, 2, 4)
    for i, s in enumerate((sim_pos, sim_neg)):
        bank.keys[i] = [s, np.sqrt(1 - s * s)]
    bank.values[1] = [10.0, 0.0, 0.0, 0.0]  # KL to a zero code ~ ln 4 > eta
    bank.occupied[:] = True
    return bank


class TestTriplet:
    def test_satisfied(self):
        res = wmm_loss(triplet_bank(1.0, 0.0), np.array([1.0, 0.0]), np.zeros(4))
        assert (res.positive, res.negative) == (0, 1)
        assert res.loss == 0.0

    def test_violated(self):
        res = wmm_loss(triplet_bank(0.0, 1.0), np.array([1.0, 0.0]), np.zeros(4))
        assert res.loss == pytest.approx(1.1, abs=1e-12)

    def test_hinge_formula(self, rng):
        for _ in range(20):
            sp, sn = rng.uniform(-1, 1, 2)
            m = float(rng.uniform(0, 0.5))
            res = wmm_loss(triplet_bank(sp, sn), np.array([1.0, 0.0]), np.zeros(4), margin=m)
            assert res.loss == pytest.approx(max(0.0, (1 - sp) - (1 - sn) + m), abs=1e-12)

    def test_missing_side_gives_zero(self):
        bank = triplet_bank(0.0, 1.0)
        bank.occupied[1] = False
        res = wmm_loss(bank, np.array([1.0, 0.0]), np.zeros(4))
        assert res.loss == 0.0 and res.negative is None

    def test_gradient_reaches_query_only(self):
        bank = triplet_bank(0.0, 1.0)
        keys = bank.keys.copy()
        q = Tensor([1.0, 0.0], requires_grad=True)
        backward(wmm_loss(bank, q, np.zeros(4)).loss)
        np.testing.assert_allclose(q.grad, bank.keys[1] - bank.keys[0])
        np.testing.assert_array_equal(bank.keys, keys)

    def test_negative_margin(self):
        with pytest.raises(ContractError):
            wmm_loss(triplet_bank(0, 1), np.array([1.0, 0.0]), np.zeros(4), margin=-0.1)


class TestUpdate:
    def test_empty_writes_slot0(self):
        bank = MemoryBank(3, 2, 2)
        rep = memory_update(bank, np.array([0.0, 2.0]), np.zeros(2))
        assert (rep.action, rep.slot, rep.evicted) == ("written", 0, False)
        np.testing.assert_allclose(bank.keys[0], [0, 1])

    def test_identical_entry_merges(self, rng):
        bank = random_bank(rng, 5)
        key = bank.keys[2].copy()
        rep = memory_update(bank, key * 3.0, bank.values[2].copy())
        assert (rep.action, rep.slot) == ("merged", 2)
        np.testing.assert_allclose(bank.keys[2], key, atol=1e-15)

    def test_merge_is_renormalized_mean(self, rng):
        bank = MemoryBank(2, 4, 3)
        memory_update(bank, unit(rng.normal(size=4)), np.zeros(3))
        old = bank.keys[0].copy()
        q = unit(old + 0.3 * rng.normal(size=4))
        memory_update(bank, q, np.full(3, 0.01), step=5)
        np.testing.assert_allclose(bank.keys[0], unit(old + q), atol=1e-15)
        assert bank.last_access[0] == 5 and len(bank) == 1
        np.testing.assert_array_equal(bank.values[0], np.zeros(3))

    @pytest.mark.parametrize("offset,action", [(-1e-3, "merged"), (1e-3, "written")])
    def test_threshold_flip(self, offset, action):
        # stored code [a,0,0,0] against an incoming zero code; solve KL(a) = eta + offset
        from scipy.optimize import brentq

        eta = 0.7
        gap = brentq(lambda a: wavelet_kl([a, 0, 0, 0], np.zeros(4)) - (eta + offset), 0, 50,
                     xtol=1e-14)
        code = np.array([gap, 0.0, 0.0, 0.0])
        assert abs(wavelet_kl(code, np.zeros(4)) - (eta + offset)) < 1e-9
        bank = MemoryBank(4, 2, 4)
        memory_update(bank, np.array([1.0, 0.0]), code)
        rep = memory_update(bank, np.array([1.0, 0.0]), np.zeros(4), eta=eta)
        assert rep.action == action

    def test_lru_replay(self, rng):
        cap = 4
        bank = MemoryBank(cap, 3, 2)
        slots, last = {}, {}
        for step in range(60):
            q = unit(rng.normal(size=3))
            z = rng.normal(0, 40, size=2)  # codes far apart: every update fails the gate
            before = len(bank)
            rep = memory_update(bank, q, z, step=step)
            if rep.action == "merged":
                last[rep.slot] = step
                continue
            if before < cap:
                want = min(set(range(cap)) - set(slots))
            else:
                want = min(last, key=lambda s: (last[s], s))
            assert rep.slot == want and rep.evicted == (before == cap)
            slots[want] = step
            last[want] = step
            assert len(bank) <= cap

    @given(st.integers(0, 2 ** 32 - 1))
    def test_invariants(self, seed):
        r = np.random.default_rng(seed)
        cap = int(r.integers(1, 8))
        bank = MemoryBank(cap, 4, 3)
        for step in range(30):
            before = len(bank)
            rep = memory_update(bank, r.normal(size=4), r.normal(0, float(r.uniform(0.1, 5)), 3),
                                step=step)
            assert len(bank) <= cap
            if rep.action == "merged":
                assert len(bank) == before
            idx = bank.occupied_indices()
            np.testing.assert_allclose(np.linalg.norm(bank.keys[idx], axis=1), 1.0, atol=1e-9)


class TestBankFile:
    def test_roundtrip(self, tmp_path, rng):
        bank = random_bank(rng, 6, fill=4)
        bank.last_access[:] = rng.integers(0, 1000, 6)
        bank.save(tmp_path / "b.mmbank")
        other = MemoryBank.load(tmp_path / "b.mmbank")
        for name in ("keys", "values", "last_access", "occupied"):
            np.testing.assert_array_equal(getattr(other, name), getattr(bank, name))

    def test_layout(self):
        bank = MemoryBank(2, 3, 1)
        bank.occupied[1] = True
        bank.last_access[1] = 7
        buf = bank.to_bytes()
        assert buf[:8] == b"MMBANK01"
        assert [int.from_bytes(buf[8 + 4 * i:12 + 4 * i], "little") for i in range(3)] == [2, 3, 1]
        slot = 1 + 8 + 8 * 4
        assert len(buf) == 20 + 2 * slot
        assert buf[20 + slot] == 1
        assert int.from_bytes(buf[21 + slot:29 + slot], "little") == 7

    def test_bad_magic_and_size(self):
        buf = MemoryBank(2, 3, 1).to_bytes()
        with pytest.raises(FormatError):
            MemoryBank.from_bytes(b"X" + buf[1:])
        with pytest.raises(FormatError):
            MemoryBank.from_bytes(buf[:-1])
        with pytest.raises(FormatError):
            MemoryBank.from_bytes(buf + b"\0")
        for cut in (8, 12, 19):
            with pytest.raises(FormatError):
                MemoryBank.from_bytes(buf[:cut])


def test_stats(rng):
    bank = random_bank(rng, 10, fill=6)
    s = bank_stats(bank, bins=4)
    assert s["occupied"] == 6 and s["capacity"] == 10
    assert sum(s["access_hist"]["counts"]) == 6
    assert sum(s["centroid_sim_hist"]["counts"]) == 6
    assert bank_stats(MemoryBank(3, 2, 1))["occupied"] == 0
