"""Data model for asynchronous high-frequency observations.

An :class:`AsyncPanel` holds, for each asset, a strictly increasing grid of
integer tick indices and one observed value per tick. Grids may differ across
assets; all pairwise computations go through the sorted grid intersection
(:func:`pair_intersection`). Times are integer ticks plus a scalar
``tick_duration`` (in years), which makes intersections exact set operations.

Classes
-------
AsyncPanel, PairGrid, PanelSummary

Functions
---------
pair_intersection, neighborhood_xi, neighborhood_k, load_csv, save_csv,
summarize
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyIntersectionError, TickDataError

#: One second on a 6.5-hour trading day, expressed in years.
DEFAULT_TICK_DURATION = 1.0 / (252 * 23400)

CSV_HEADER = ("tick", "asset", "value")


@dataclass(frozen=True)
class AsyncPanel:
    """Per-asset tick-indexed observations, immutable after construction.

    Parameters
    ----------
    tick_duration : float
        Length of one tick in years; strictly positive.
    assets : tuple of str
        Asset identifiers, one per series.
    ticks : tuple of ndarray
        Per-asset strictly increasing int64 tick indices (the observation
        grids).
    values : tuple of ndarray
        Per-asset float64 observed values, aligned with ``ticks``.

    Notes
    -----
    Every asset must have at least two observations. The arrays are marked
    read-only so a constructed panel can be shared freely across worker
    processes or threads.
    """

    tick_duration: float
    assets: tuple[str, ...]
    ticks: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    synchronous: bool = field(init=False)

    def __post_init__(self):
        if not self.tick_duration > 0:
            raise ValueError(f"tick_duration must be positive, got {self.tick_duration}")
        if len(self.assets) == 0:
            raise ValueError("panel needs at least one asset")
        if len(set(self.assets)) != len(self.assets):
            raise ValueError("asset names must be unique")
        if not (len(self.assets) == len(self.ticks) == len(self.values)):
            raise ValueError("assets, ticks and values must have equal lengths")
        norm_ticks = []
        norm_values = []
        for name, t, v in zip(self.assets, self.ticks, self.values):
            t = np.ascontiguousarray(t, dtype=np.int64)
            v = np.ascontiguousarray(v, dtype=np.float64)
            if t.ndim != 1 or v.ndim != 1 or t.size != v.size:
                raise ValueError(f"asset {name!r}: ticks and values must be 1-d and aligned")
            if t.size < 2:
                raise TickDataError(f"asset {name!r}: needs at least 2 observations, got {t.size}")
            if np.any(np.diff(t) <= 0):
                raise TickDataError(f"asset {name!r}: tick indices must be strictly increasing")
            if not np.all(np.isfinite(v)):
                raise TickDataError(f"asset {name!r}: values must be finite")
            t.setflags(write=False)
            v.setflags(write=False)
            norm_ticks.append(t)
            norm_values.append(v)
        object.__setattr__(self, "ticks", tuple(norm_ticks))
        object.__setattr__(self, "values", tuple(norm_values))
        first = norm_ticks[0]
        sync = all(t.size == first.size and np.array_equal(t, first) for t in norm_ticks[1:])
        object.__setattr__(self, "synchronous", sync)

    @property
    def p(self) -> int:
        """Number of assets."""
        return len(self.assets)

    def n_obs(self, i: int) -> int:
        """Observation count of asset ``i``."""
        return self.ticks[i].size

    def asset_index(self, asset: int | str) -> int:
        """Resolve an asset identifier (index or name) to its index."""
        if isinstance(asset, str):
            try:
                return self.assets.index(asset)
            except ValueError:
                raise KeyError(f"unknown asset {asset!r}") from None
        i = int(asset)
        if not 0 <= i < self.p:
            raise IndexError(f"asset index {i} out of range for p={self.p}")
        return i


@dataclass(frozen=True)
class PairGrid:
    """Sorted common tick grid of two assets with aligned values.

    ``ticks`` is the intersection of the two observation grids; ``values_i``
    and ``values_j`` are the respective observations at those ticks. For a
    diagonal pair (``asset_i == asset_j``) the two value arrays are the same
    object.
    """

    asset_i: int
    asset_j: int
    ticks: np.ndarray
    values_i: np.ndarray
    values_j: np.ndarray

    @property
    def n(self) -> int:
        """Number of common ticks (the pairwise sample size)."""
        return self.ticks.size


@dataclass(frozen=True)
class PanelSummary:
    """Panel-level sample sizes.

    ``n`` counts distinct observation ticks across all assets; ``n_star`` is
    the smallest pairwise overlap (the effective sample size driving
    convergence rates); ``n_pair_max`` the largest. Pairs with an empty
    intersection are listed in ``empty_pairs`` and force ``n_star = 0``.
    """

    n: int
    n_star: int
    n_pair_max: int
    empty_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not (self.n_star <= self.n_pair_max <= self.n):
            raise ValueError(
                f"inconsistent summary: n_star={self.n_star}, "
                f"n_pair_max={self.n_pair_max}, n={self.n}"
            )


def pair_intersection(panel: AsyncPanel, i: int | str, j: int | str) -> PairGrid:
    """Build the pairwise synchronized grid for assets ``i`` and ``j``.

    Parameters
    ----------
    panel : AsyncPanel
    i, j : int or str
        Asset indices or names.

    Returns
    -------
    PairGrid
        The sorted common ticks with aligned values. Swapping ``i`` and ``j``
        swaps the value arrays and nothing else.

    Raises
    ------
    EmptyIntersectionError
        If the two assets share no ticks (no pairwise estimate exists).
    """
    ii = panel.asset_index(i)
    jj = panel.asset_index(j)
    if ii == jj:
        v = panel.values[ii]
        return PairGrid(ii, jj, panel.ticks[ii], v, v)
    idx_i, idx_j = kernels.intersect_sorted(panel.ticks[ii], panel.ticks[jj])
    if idx_i.size == 0:
        raise EmptyIntersectionError(
            f"assets {panel.assets[ii]!r} and {panel.assets[jj]!r} share no ticks"
        )
    return PairGrid(
        ii,
        jj,
        panel.ticks[ii][idx_i],
        panel.values[ii][idx_i],
        panel.values[jj][idx_j],
    )


def neighborhood_xi(
    grid: PairGrid, k: int, xi: float, tick_duration: float
) -> np.ndarray:
    """Indices of grid points within time radius ``xi`` of point ``k``.

    Returns the sorted indices ``l != k`` with
    ``|ticks[l] - ticks[k]| * tick_duration <= xi``; may be empty.
    """
    if not 0 <= k < grid.n:
        raise IndexError(f"k={k} out of range for grid of size {grid.n}")
    if not xi > 0:
        raise ValueError(f"xi must be positive, got {xi}")
    gaps = np.abs(grid.ticks - grid.ticks[k]).astype(np.float64) * tick_duration
    idx = np.nonzero(gaps <= xi)[0]
    return idx[idx != k].astype(np.int64)


def neighborhood_k(grid: PairGrid, k: int, K: int) -> np.ndarray:
    """Indices of the up-to-``2K`` nearest grid positions around ``k``.

    The window is ``{l : 0 < |l - k| <= K}`` clipped to the grid, of size
    ``min(k, K) + min(n-1-k, K)`` (0-based); boundary windows shrink, they
    never fail.
    """
    if not 0 <= k < grid.n:
        raise IndexError(f"k={k} out of range for grid of size {grid.n}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    lo = max(0, k - K)
    hi = min(grid.n - 1, k + K)
    idx = np.arange(lo, hi + 1, dtype=np.int64)
    return idx[idx != k]


def load_csv(path, tick_duration: float = DEFAULT_TICK_DURATION) -> AsyncPanel:
    """Read an :class:`AsyncPanel` from a tick CSV file.

    The file must have the exact header ``tick,asset,value``; ``tick`` is a
    nonnegative integer, ``asset`` a string identifier and ``value`` a
    decimal. Rows of one asset must appear in strictly increasing tick order.
    Asset names are mapped to dense indices in sorted lexicographic order,
    regardless of the order they first appear in.

    Raises
    ------
    TickDataError
        On malformed rows; the error message carries the 1-based line number.
    """
    per_ticks: dict[str, list[int]] = {}
    per_values: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TickDataError("empty file, expected header 'tick,asset,value'", line=1)
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TickDataError(
                f"bad header {','.join(header)!r}, expected 'tick,asset,value'", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise TickDataError(f"expected 3 fields, got {len(row)}", line=lineno)
            raw_tick, asset, raw_value = (f.strip() for f in row)
            try:
                tick = int(raw_tick)
            except ValueError:
                raise TickDataError(f"tick {raw_tick!r} is not an integer", line=lineno)
            if tick < 0:
                raise TickDataError(f"tick must be nonnegative, got {tick}", line=lineno)
            if not asset:
                raise TickDataError("empty asset id", line=lineno)
            try:
                value = float(raw_value)
            except ValueError:
                raise TickDataError(f"value {raw_value!r} is not a number", line=lineno)
            seen = per_ticks.setdefault(asset, [])
            if seen:
                if tick == seen[-1]:
                    raise TickDataError(
                        f"duplicate observation for asset {asset!r} at tick {tick}",
                        line=lineno,
                    )
                if tick < seen[-1]:
                    raise TickDataError(
                        f"non-monotone tick {tick} for asset {asset!r} "
                        f"(previous {seen[-1]})",
                        line=lineno,
                    )
            seen.append(tick)
            per_values.setdefault(asset, []).append(value)
    if not per_ticks:
        raise TickDataError("no data rows")
    assets = tuple(sorted(per_ticks))
    return AsyncPanel(
        tick_duration=tick_duration,
        assets=assets,
        ticks=tuple(np.asarray(per_ticks[a], dtype=np.int64) for a in assets),
        values=tuple(np.asarray(per_values[a], dtype=np.float64) for a in assets),
    )


def save_csv(panel: AsyncPanel, path) -> None:
    """Write a panel to the tick CSV format (the inverse of :func:`load_csv`).

    Rows are emitted asset-major in lexicographic asset order, ticks
    ascending, values formatted with shortest round-trip ``repr``. Loading
    the result reproduces the panel exactly.
    """
    order = sorted(range(panel.p), key=lambda i: panel.assets[i])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in order:
            name = panel.assets[i]
            for t, v in zip(panel.ticks[i].tolist(), panel.values[i].tolist()):
                writer.writerow((t, name, repr(v)))


def summarize(panel: AsyncPanel) -> PanelSummary:
    """Compute panel-level sample sizes over all asset pairs.

    ``n_star = min_{i,j} n_{i,j}`` runs over all ordered pairs including the
    diagonal (for which ``n_{i,i} = n_i``). A pair with an empty intersection
    is flagged in ``empty_pairs`` and makes ``n_star`` zero rather than
    raising.
    """
    sizes = [panel.n_obs(i) for i in range(panel.p)]
    if panel.synchronous:
        n = sizes[0]
        return PanelSummary(n=n, n_star=n, n_pair_max=n)
    n = np.unique(np.concatenate(panel.ticks)).size
    n_star = min(sizes)
    n_pair_max = max(sizes)
    empty: list[tuple[int, int]] = []
    for i in range(panel.p):
        for j in range(i + 1, panel.p):
            idx_i, _ = kernels.intersect_sorted(panel.ticks[i], panel.ticks[j])
            if idx_i.size == 0:
                empty.append((i, j))
                n_star = 0
            else:
                n_star = min(n_star, idx_i.size)
    return PanelSummary(
        n=n, n_star=n_star, n_pair_max=n_pair_max, empty_pairs=tuple(empty)
    )
