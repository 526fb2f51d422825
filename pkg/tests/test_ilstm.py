import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from speedgrid.ilstm import (DAYS, HOURS, Ilstm, InvalidPercentError,
                             LengthMismatchError, SpeedGrid, build_link_grids,
                             empty_grid, slot_index)


def brute_force_grid(records, percent, length):
    """Independent per-cell mean: regroup records from scratch."""
    slots = 100 // percent
    cells = {}
    for day, hour, dist, speed in records:
        slot = min(int((dist * 100.0 / length) // percent), slots - 1)
        cells.setdefault((day, hour, slot), []).append(speed)
    counts = np.zeros((DAYS, HOURS, slots), dtype=np.int64)
    means = np.full((DAYS, HOURS, slots), np.nan)
    for (d, h, s), speeds in cells.items():
        counts[d, h, s] = len(speeds)
        means[d, h, s] = sum(speeds) / len(speeds)
    return counts, means


def fill_records(ilstm, records, length):
    for day, hour, dist, speed in records:
        ilstm.fill(day, hour, [dist], [speed], length)
    return ilstm


class TestInit:
    def test_percent_25_gives_4_slots(self):
        m = Ilstm(25)
        assert m.slots == 4
        assert all(cell == [0, []] for day in m.cells for h in day for cell in h)
        assert len(m.cells) == 7 and len(m.cells[0]) == 24

    def test_percent_10_gives_10_slots(self):
        assert Ilstm(10).slots == 10

    def test_percent_must_divide_100(self):
        with pytest.raises(InvalidPercentError):
            Ilstm(30)


class TestFill:
    def test_hand_traced_slots(self):
        m = Ilstm(25).fill(1, 2, [10.0, 60.0], [30.0, 50.0], 100.0)
        assert m.cells[1][2][0] == [1, [30.0]]
        assert m.cells[1][2][2] == [1, [50.0]]
        assert m.cells[1][2][1] == [0, []]

    def test_end_of_link_clamps_to_last_slot(self):
        m = Ilstm(25).fill(0, 0, [100.0], [20.0], 100.0)
        assert m.cells[0][0][3] == [1, [20.0]]

    def test_empty_fill_is_noop(self):
        m = Ilstm(25).fill(0, 0, [], [], 100.0)
        assert m.total_count() == 0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            Ilstm(25).fill(0, 0, [1.0], [1.0, 2.0], 100.0)

    def test_slot_partition_brute_force(self):
        # every integer dist on a small link lands in exactly one slot
        length = 57.0
        for percent in (10, 25, 50):
            slots = 100 // percent
            for dist in range(0, 58):
                pos = dist * 100.0 / length
                hits = [s for s in range(slots)
                        if s == slot_index(pos, percent)]
                assert len(hits) == 1


class TestFinalize:
    def test_mean_of_cell(self):
        m = Ilstm(25)
        m.fill(0, 0, [10.0, 10.0, 10.0], [10.0, 20.0, 30.0], 100.0)
        grid = m.finalize()
        assert grid.counts[0, 0, 0] == 3
        assert grid.means[0, 0, 0] == pytest.approx(20.0)

    def test_empty_cell_stays_empty(self):
        grid = Ilstm(25).finalize()
        assert grid.counts.sum() == 0
        assert np.isnan(grid.means).all()

    def test_count_conservation(self):
        rng = np.random.default_rng(5)
        records = [(int(rng.integers(7)), int(rng.integers(24)),
                    float(rng.uniform(0, 80)), float(rng.uniform(1, 100)))
                   for _ in range(200)]
        grid = fill_records(Ilstm(10), records, 80.0).finalize()
        assert grid.counts.sum() == 200

    @given(st.integers(0, 2 ** 32 - 1))
    def test_fill_order_independence(self, seed):
        rng = np.random.default_rng(seed)
        records = [(int(rng.integers(7)), int(rng.integers(24)),
                    float(rng.uniform(0, 60)), float(rng.uniform(1, 120)))
                   for _ in range(30)]
        direct = fill_records(Ilstm(20), records, 60.0).finalize()
        perm = [records[i] for i in rng.permutation(len(records))]
        shuffled = fill_records(Ilstm(20), perm, 60.0).finalize()
        assert direct == shuffled

    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        length = float(rng.uniform(20, 300))
        percent = int(rng.choice([4, 10, 25]))
        records = [(int(rng.integers(7)), int(rng.integers(24)),
                    float(rng.uniform(0, length)), float(rng.uniform(1, 120)))
                   for _ in range(int(rng.integers(1, 120)))]
        grid = fill_records(Ilstm(percent), records, length).finalize()
        counts, means = brute_force_grid(records, percent, length)
        assert np.array_equal(grid.counts, counts)
        assert np.allclose(grid.means, means, atol=1e-12, equal_nan=True)


class TestSerialization:
    def test_json_round_trip(self):
        m = Ilstm(25)
        m.fill(3, 15, [5.0, 95.0], [33.0, 44.0], 100.0)
        grid = m.finalize()
        assert SpeedGrid.from_json_dict(grid.to_json_dict()) == grid

    def test_cell_order_is_day_major(self):
        m = Ilstm(50)
        m.fill(0, 0, [10.0], [11.0], 100.0)
        m.fill(0, 1, [10.0], [22.0], 100.0)
        doc = m.finalize().to_json_dict()
        assert doc["cells"][0] == [1, 11.0]
        assert doc["cells"][2] == [1, 22.0]  # hour 1 starts at index slots=2

    def test_invariant_checked(self):
        with pytest.raises(ValueError):
            SpeedGrid(percent=50,
                      counts=np.ones((7, 24, 2), dtype=np.int64),
                      means=np.full((7, 24, 2), np.nan))


def test_build_link_grids():
    from tests.test_domain import make_link, make_point
    from speedgrid.domain import Trip

    links = {"L1": make_link("L1", 100.0), "L2": make_link("L2", 40.0)}
    trips = [Trip("T1", (make_point(step=0, dist=10.0, speed=30.0),
                         make_point(step=1, link_id="L2", dist=39.0, speed=60.0)))]
    grids = build_link_grids(trips, links, percent=25)
    assert set(grids) == {"L1", "L2"}
    assert grids["L1"].counts[1, 8, 0] == 1
    assert grids["L2"].means[1, 8, 3] == pytest.approx(60.0)


def test_empty_grid_shape():
    g = empty_grid(10)
    assert g.slots == 10 and g.counts.sum() == 0
