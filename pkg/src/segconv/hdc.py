"""Dilation-schedule analysis: the max-gap recurrence, hole-free validity,
receptive-field accounting, sawtooth schedule generation, and an exact
brute-force footprint oracle that renders gridding patterns.

Validity rule
-------------
For a stack of n layers with shared odd kernel K and rates [r1..rn] listed
bottom (closest to the input) to top, the recurrence

    M_n = r_n
    M_i = max(M_{i+1} - 2*r_i,  2*r_i - M_{i+1},  r_i)        for i = n-1 .. 2

bounds the largest gap between nonzero taps of layers 2..n composed. The
schedule is declared gridding-free when M_2 <= K *and* r_1 == 1: the bottom
layer is then a solid K-wide block, which closes every remaining gap of size
at most K. The second condition matters: the recurrence never consults r_1,
so on its own M_2 <= K would wave through uniform-rate stacks such as
[2, 2, 2] whose footprint is a checkerboard. The footprint oracle below is
the ground truth whenever the analytic rule is in doubt; the rule is
deliberately conservative (some hole-free stacks, e.g. rate-sorted
permutations of valid ones, are declared invalid).

A single layer (n == 1) is accepted when r_1 <= K, the degenerate reading of
the same inequality; its footprint still shows r_1 > 1 sampling gaps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce
from itertools import product
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DilationSchedule:
    """Ordered dilation rates (bottom to top) sharing one square kernel."""

    rates: tuple[int, ...]
    kernel: int = 3

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates:
            raise ValueError("schedule must contain at least one rate")
        if any(r < 1 for r in rates):
            raise ValueError(f"all rates must be >= 1, got {rates}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.kernel}")

    def __len__(self):
        return len(self.rates)


def max_distance(schedule: DilationSchedule) -> tuple[list[int], bool]:
    """Run the max-gap recurrence; returns ([M_2..M_n], valid).

    For n == 1 the list is empty and validity degenerates to r_1 <= K.
    """
    rates, k = schedule.rates, schedule.kernel
    n = len(rates)
    if n == 1:
        return [], rates[0] <= k
    m = rates[n - 1]
    m_values = [m]
    for i in range(n - 2, 0, -1):  # fills M_{n-1} .. M_2
        r = rates[i]
        m = max(m - 2 * r, 2 * r - m, r)
        m_values.append(m)
    m_values.reverse()
    valid = m_values[0] <= k and rates[0] == 1
    return m_values, valid


def common_factor_check(rates) -> bool:
    """True when every rate shares a factor > 1 (e.g. [2,4,8]): such stacks
    sample only a sublattice and always grid."""
    rates = list(rates)
    if not rates:
        raise ValueError("rates must be nonempty")
    return reduce(math.gcd, rates) > 1


@dataclass
class FootprintMap:
    """Exact contribution counts of the bottom-layer pixels feeding one
    top-layer pixel; odd-sided square grid centered on that pixel."""

    grid: np.ndarray
    schedule: DilationSchedule = field(repr=False)

    @property
    def side(self) -> int:
        return self.grid.shape[0]

    def total(self) -> int:
        return int(self.grid.sum())

    def holes(self) -> int:
        return int(np.count_nonzero(self.grid == 0))


def footprint(schedule: DilationSchedule) -> FootprintMap:
    """Brute-force oracle: iterated full 2-D convolution of the all-ones
    K x K kernel indicator masks, dilated by each rate in turn.

    Counts are exact integers; the result is independent of layer order
    (convolution commutes). Grid side = 1 + sum((K-1) * r_i); total mass =
    K^(2n).
    """
    k = schedule.kernel
    grid = np.ones((1, 1), dtype=np.int64)
    for r in schedule.rates:
        old_h, old_w = grid.shape
        ext = (k - 1) * r
        nxt = np.zeros((old_h + ext, old_w + ext), dtype=np.int64)
        for ky in range(k):
            for kx in range(k):
                nxt[ky * r : ky * r + old_h, kx * r : kx * r + old_w] += grid
        grid = nxt
    return FootprintMap(grid=grid, schedule=schedule)


def footprint_1d(schedule: DilationSchedule) -> np.ndarray:
    """1-D counts along one axis; the 2-D grid is their outer product."""
    k = schedule.kernel
    line = np.ones(1, dtype=np.int64)
    for r in schedule.rates:
        nxt = np.zeros(line.size + (k - 1) * r, dtype=np.int64)
        for t in range(k):
            nxt[t * r : t * r + line.size] += line
        line = nxt
    return line


def coverage_report(fp: FootprintMap) -> tuple[int, float, float]:
    """(hole count, covered fraction, gridded fraction) over the full
    theoretical receptive-field square."""
    area = fp.grid.size
    holes = fp.holes()
    return holes, (area - holes) / area, holes / area


def rf_increase(groups, kernel: int) -> int:
    """Receptive-field growth along one axis from a stack of dilated convs.

    `groups` is a list of (count, rate) pairs; every conv contributes
    (K-1) * rate. Published accountings for comparable stacks sometimes
    differ by a stem-dependent constant; this function counts the dilated
    convs only.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {kernel}")
    total = 0
    for count, rate in groups:
        if count < 0 or rate < 1:
            raise ValueError(f"bad group ({count}, {rate})")
        total += count * (kernel - 1) * rate
    return total


def rf_increase_for_rates(rates, kernel: int) -> int:
    return rf_increase([(1, r) for r in rates], kernel)


def sawtooth_schedule(base_rates, total_layers: int, kernel: int = 3,
                      tail=None) -> DilationSchedule:
    """Tile a rising base pattern across `total_layers` layers.

    The final partial group is truncated to the first rates of the pattern;
    pass `tail` to override those trailing layers instead (some published
    configurations hold the last group at a constant rate rather than
    restarting the ramp).
    """
    base = [int(r) for r in base_rates]
    if not base:
        raise ValueError("base rate pattern must be nonempty")
    if total_layers < 1:
        raise ValueError("total_layers must be >= 1")
    reps = -(-total_layers // len(base))
    rates = (base * reps)[:total_layers]
    if tail is not None:
        tail = [int(r) for r in tail]
        if len(tail) > total_layers:
            raise ValueError("tail longer than the schedule")
        rates[total_layers - len(tail):] = tail
    return DilationSchedule(rates=tuple(rates), kernel=kernel)


def schedule_search(n: int, kernel: int, rf_target: int) -> list[DilationSchedule]:
    """Enumerate rate tuples (each rate in 1..rf_target) and keep those that
    the analytic rule accepts, whose footprint is hole-free, and whose RF
    increase reaches the target. Sorted by RF descending, then rates."""
    if n < 2:
        raise ValueError("search needs at least 2 layers")
    if rf_target < 1:
        raise ValueError("rf_target must be >= 1")
    found = []
    for rates in product(range(1, rf_target + 1), repeat=n):
        sched = DilationSchedule(rates=rates, kernel=kernel)
        _, valid = max_distance(sched)
        if not valid:
            continue
        if rf_increase_for_rates(rates, kernel) < rf_target:
            continue
        if footprint(sched).holes() != 0:
            continue
        found.append(sched)
    found.sort(key=lambda s: (-rf_increase_for_rates(s.rates, kernel), s.rates))
    return found


def schedule_report(schedule: DilationSchedule, include_footprint: bool = True) -> dict:
    """JSON-ready summary: rates, kernel, M values, validity, RF increase,
    gcd flag, and (optionally) oracle hole counts."""
    m_values, valid = max_distance(schedule)
    report = {
        "rates": list(schedule.rates),
        "K": schedule.kernel,
        "M_values": m_values,
        "valid": valid,
        "rf_increase": rf_increase_for_rates(schedule.rates, schedule.kernel),
        "gcd_flag": common_factor_check(schedule.rates),
    }
    if include_footprint:
        holes, coverage, gridding = coverage_report(footprint(schedule))
        report["holes"] = holes
        report["coverage_fraction"] = coverage
        report["gridding_fraction"] = gridding
    return report


# ---------------------------------------------------------------------------
# exports: P2 (ASCII) PGM, CSV of raw counts, JSON report
# ---------------------------------------------------------------------------


def footprint_to_pgm(fp: FootprintMap) -> str:
    """Counts linearly mapped to 0..255; zero-count cells stay 0."""
    peak = int(fp.grid.max())
    rows = []
    for row in fp.grid:
        rows.append(" ".join(str(int(v) * 255 // peak) for v in row))
    header = f"P2\n{fp.side} {fp.side}\n255\n"
    return header + "\n".join(rows) + "\n"


def footprint_to_csv(fp: FootprintMap) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in fp.grid) + "\n"


def write_footprint(path, fp: FootprintMap, fmt: str) -> None:
    path = Path(path)
    if fmt == "pgm":
        path.write_text(footprint_to_pgm(fp), encoding="ascii")
    elif fmt == "csv":
        path.write_text(footprint_to_csv(fp), encoding="ascii")
    elif fmt == "json":
        path.write_text(
            json.dumps(schedule_report(fp.schedule), sort_keys=True, indent=1) + "\n",
            encoding="ascii",
        )
    else:
        raise ValueError(f"unknown footprint format {fmt!r}")


def read_pgm(path) -> np.ndarray:
    """Parse an ASCII (P2) PGM back into an int array."""
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError("not an ASCII PGM (P2) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = [int(t) for t in tokens[4 : 4 + w * h]]
    if len(vals) != w * h or any(v < 0 or v > maxval for v in vals):
        raise ValueError("malformed PGM payload")
    return np.array(vals, dtype=np.int64).reshape(h, w)
