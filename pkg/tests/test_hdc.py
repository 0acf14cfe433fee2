import itertools
import json

import numpy as np
import pytest

from oracles import footprint_counts_2d, max_gap_1d
from segconv.hdc import (
    DilationSchedule,
    common_factor_check,
    coverage_report,
    footprint,
    footprint_1d,
    footprint_to_csv,
    footprint_to_pgm,
    max_distance,
    read_pgm,
    rf_increase,
    rf_increase_for_rates,
    sawtooth_schedule,
    schedule_report,
    schedule_search,
    write_footprint,
)
from segconv.tensor import Rng


def sched(rates, k=3):
    return DilationSchedule(rates=tuple(rates), kernel=k)


# -- the max-gap recurrence ----------------------------------------------------


def test_rising_schedule_with_small_gap_is_valid():
    m, valid = max_distance(sched([1, 2, 5]))
    assert m == [2, 5]
    assert valid


def test_rising_schedule_with_large_top_rate_is_invalid():
    m, valid = max_distance(sched([1, 2, 9]))
    assert m == [5, 9]
    assert not valid


def test_all_ones_schedule_valid_any_kernel():
    for k in (3, 5, 7):
        m, valid = max_distance(sched([1] * 6, k))
        assert m == [1] * 5
        assert valid


def test_uniform_rate2_stack_is_flagged_invalid():
    # the classic gridding stack; its footprint is a quarter-density lattice
    _, valid = max_distance(sched([2, 2, 2]))
    assert not valid
    assert footprint(sched([2, 2, 2])).holes() > 0


def test_single_layer_degenerate_rule():
    assert max_distance(sched([2])) == ([], True)
    assert max_distance(sched([4])) == ([], False)


def test_empty_schedule_rejected():
    with pytest.raises(ValueError):
        DilationSchedule(rates=(), kernel=3)


def test_recurrence_upper_bounds_exact_upper_stack_gap():
    # M_2 must never fall below the true max gap of layers 2..n composed,
    # otherwise the validity rule would pass gridding stacks
    rng = Rng(77)
    for _ in range(300):
        n = 2 + rng.randint(3)
        k = (3, 5)[rng.randint(2)]
        rates = [1 + rng.randint(6) for _ in range(n)]
        m, _ = max_distance(sched(rates, k))
        assert m[0] >= max_gap_1d(rates[1:], k)


# -- the footprint oracle ------------------------------------------------------


def test_single_dilated_layer_covers_9_of_25():
    fp = footprint(sched([2]))
    assert fp.side == 5
    assert int(np.count_nonzero(fp.grid)) == 9
    holes, coverage, gridding = coverage_report(fp)
    assert holes == 16
    assert coverage == 9 / 25
    assert gridding == 16 / 25


def test_uniform_stack_checkerboard_fraction():
    fp = footprint(sched([2, 2, 2]))
    assert fp.side == 13
    ys, xs = np.nonzero(fp.grid)
    assert np.all(ys % 2 == 0) and np.all(xs % 2 == 0)
    holes, coverage, _ = coverage_report(fp)
    assert coverage == 49 / 169
    assert holes == 169 - 49


def test_sawtooth_stack_has_no_holes():
    fp = footprint(sched([1, 2, 3]))
    assert fp.side == 13
    assert fp.holes() == 0


def test_footprint_of_all_rate1_pair_is_full():
    holes, coverage, _ = coverage_report(footprint(sched([1, 1])))
    assert holes == 0 and coverage == 1.0


def test_footprint_matches_independent_counting_oracle():
    rng = Rng(50)
    for _ in range(20):
        n = 1 + rng.randint(3)
        k = (3, 5)[rng.randint(2)]
        rates = [1 + rng.randint(4) for _ in range(n)]
        got = footprint(sched(rates, k)).grid
        assert np.array_equal(got, footprint_counts_2d(rates, k))


def test_footprint_order_invariance():
    rng = Rng(51)
    for _ in range(30):
        n = 2 + rng.randint(3)
        rates = [1 + rng.randint(5) for _ in range(n)]
        perm = list(rates)
        for i in range(len(perm) - 1, 0, -1):  # seeded Fisher-Yates
            j = rng.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        assert np.array_equal(footprint(sched(rates)).grid,
                              footprint(sched(perm)).grid)


def test_footprint_total_mass_and_center():
    for rates, k in [([2, 3], 3), ([1, 2, 3], 3), ([4], 5), ([2, 2, 2, 2], 3)]:
        fp = footprint(sched(rates, k))
        assert fp.total() == k ** (2 * len(rates))
        mid = fp.side // 2
        assert fp.grid[mid, mid] >= 1


def test_footprint_separability():
    for rates, k in [([1, 2, 3], 3), ([2, 4], 5), ([3], 3)]:
        line = footprint_1d(sched(rates, k))
        grid = footprint(sched(rates, k)).grid
        assert np.array_equal(grid, np.outer(line, line))


def test_gcd_schedules_always_grid():
    for rates in ([2, 2], [2, 4], [3, 6, 9], [2, 4, 8], [4, 2], [6, 3]):
        assert common_factor_check(rates)
        assert footprint(sched(rates)).holes() > 0


# -- schedule utilities ----------------------------------------------------------


def test_common_factor_check_values():
    assert common_factor_check([2, 4, 8]) is True
    assert common_factor_check([1, 2, 3]) is False
    assert common_factor_check([3, 6, 9]) is True
    with pytest.raises(ValueError):
        common_factor_check([])


def test_rf_increase_reference_configs():
    # 23-block stage as seven 1,2,3 ramps ending in 2,2 plus a 3,4,5 stage
    ramped = [(7, 1), (7, 2), (7, 3), (2, 2), (1, 3), (1, 4), (1, 5)]
    assert rf_increase(ramped, 3) == 116
    assert rf_increase([(26, 1)], 3) == 52
    bigger = [(5, 1), (5, 2), (5, 5), (5, 9), (1, 1), (1, 2), (1, 5),
              (1, 5), (1, 9), (1, 17)]
    assert rf_increase(bigger, 3) == 248
    assert rf_increase_for_rates([1], 3) == 2


def test_rf_increase_matches_flat_expansion():
    groups = [(3, 2), (1, 5)]
    flat = [2, 2, 2, 5]
    assert rf_increase(groups, 3) == rf_increase_for_rates(flat, 3)


def test_sawtooth_truncates_final_group():
    s = sawtooth_schedule([1, 2, 3], 23)
    assert s.rates == tuple([1, 2, 3] * 7 + [1, 2])
    assert len(s) == 23


def test_sawtooth_constant_pattern():
    assert sawtooth_schedule([2], 5).rates == (2, 2, 2, 2, 2)


def test_sawtooth_four_rate_pattern():
    s = sawtooth_schedule([1, 2, 5, 9], 23)
    assert s.rates == tuple([1, 2, 5, 9] * 5 + [1, 2, 5])


def test_sawtooth_tail_override():
    s = sawtooth_schedule([1, 2, 3], 23, tail=[2, 2])
    assert s.rates == tuple([1, 2, 3] * 7 + [2, 2])


def test_sawtooth_rejects_empty_base():
    with pytest.raises(ValueError):
        sawtooth_schedule([], 5)


def test_search_finds_canonical_ramp():
    results = schedule_search(3, 3, 12)
    rates = [s.rates for s in results]
    assert (1, 2, 3) in rates
    for s in results:
        assert footprint(s).holes() == 0
        assert rf_increase_for_rates(s.rates, 3) >= 12
        _, valid = max_distance(s)
        assert valid
    # sorted by receptive field, descending
    rfs = [rf_increase_for_rates(s.rates, 3) for s in results]
    assert rfs == sorted(rfs, reverse=True)


def test_search_depth_two_cannot_reach_large_rf():
    assert schedule_search(2, 3, 50) == []


def test_search_rejects_single_layer():
    with pytest.raises(ValueError):
        schedule_search(1, 3, 4)


# -- reports and exports -----------------------------------------------------------


def test_schedule_report_fields():
    rep = schedule_report(sched([1, 2, 5]))
    assert rep["rates"] == [1, 2, 5]
    assert rep["K"] == 3
    assert rep["M_values"] == [2, 5]
    assert rep["valid"] is True
    assert rep["rf_increase"] == 16
    assert rep["gcd_flag"] is False
    assert rep["holes"] == 0
    assert rep["coverage_fraction"] == 1.0


def test_pgm_export_roundtrip(tmp_path):
    fp = footprint(sched([1, 2]))
    path = tmp_path / "fp.pgm"
    write_footprint(path, fp, "pgm")
    img = read_pgm(path)
    assert img.shape == fp.grid.shape
    peak = fp.grid.max()
    assert np.array_equal(img, fp.grid * 255 // peak)
    # zero-count cells map to 0 and only they do
    assert np.array_equal(img == 0, fp.grid == 0)


def test_pgm_single_rate1_layer_all_ones(tmp_path):
    fp = footprint(sched([1]))
    assert fp.grid.shape == (3, 3)
    assert np.all(fp.grid == 1)
    text = footprint_to_pgm(fp)
    assert text.splitlines()[0] == "P2"
    assert all(v == "255" for v in " ".join(text.splitlines()[3:]).split())


def test_csv_export_raw_counts():
    fp = footprint(sched([2]))
    rows = footprint_to_csv(fp).strip().splitlines()
    assert rows[0] == "1,0,1,0,1"
    assert rows[1] == "0,0,0,0,0"


def test_json_export_is_valid_report(tmp_path):
    path = tmp_path / "fp.json"
    write_footprint(path, footprint(sched([2, 2, 2])), "json")
    rep = json.loads(path.read_text())
    assert rep["valid"] is False
    assert rep["holes"] == 120
    assert rep["gcd_flag"] is True


def test_unknown_export_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_footprint(tmp_path / "x", footprint(sched([1])), "png")


# -- the soundness sweep (also an acceptance criterion; kept here so module-level
#    regressions are caught without running the full acceptance suite) -------------


def sweep_schedules():
    for k in (3, 5):
        for n in (2, 3, 4):
            for rates in itertools.product(range(1, 7), repeat=n):
                yield sched(rates, k)


def test_valid_schedules_never_have_holes_and_converse_is_reported():
    false_negatives = 0
    checked = 0
    for s in sweep_schedules():
        checked += 1
        _, valid = max_distance(s)
        holes = footprint(s).holes()
        if valid:
            assert holes == 0, f"analytic rule passed a gridding stack: {s}"
        elif holes == 0:
            false_negatives += 1
    assert checked == 2 * (6 ** 2 + 6 ** 3 + 6 ** 4)
    # hole-free stacks the conservative rule rejects exist; measured, not asserted
    assert false_negatives > 0
