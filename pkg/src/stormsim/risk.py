"""Risk analytics over storm catalogs.

Exceedance probabilities condition on track points falling inside a lon/lat
region (optionally collapsed to one indicator per storm), return periods and
levels invert the empirical annual exceedance-rate step function, and all
interval estimates come from a storm-level nonparametric bootstrap.  QQ
tolerance envelopes resample the simulated sample at the observed size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, GridSpec, grid_cell
from .errors import UndefinedRegionError, ValidationError

UK_REGION_BOUNDS = (-11.0, 2.0, 50.0, 60.0)


@dataclass(frozen=True)
class Region:
    """Axis-aligned lon/lat box; default is the UK study region."""

    lon_min: float = UK_REGION_BOUNDS[0]
    lon_max: float = UK_REGION_BOUNDS[1]
    lat_min: float = UK_REGION_BOUNDS[2]
    lat_max: float = UK_REGION_BOUNDS[3]

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValidationError(f"degenerate region {self}")

    def contains(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        return (
            (lon > self.lon_min) & (lon < self.lon_max)
            & (lat > self.lat_min) & (lat < self.lat_max)
        )


@dataclass(frozen=True)
class RiskResult:
    estimate: float
    ci: tuple[float, float] | None
    n_num: int
    n_den: int
    note: str = ""


def _per_storm_counts(catalog: Catalog, region: Region, omega: float):
    """Per-storm (points in region, exceedances in region) sufficient statistics."""
    num = np.empty(len(catalog.storms), dtype=float)
    den = np.empty(len(catalog.storms), dtype=float)
    for i, storm in enumerate(catalog.storms):
        inside = region.contains(storm.lons, storm.lats)
        den[i] = inside.sum()
        num[i] = np.sum(inside & (storm.vorticities > omega))
    return num, den


def _percentile_interval(reps, level):
    # replicates may hold inf (zero exceedances) or NaN (undefined resample);
    # both propagate into the interval by design
    alpha = (1.0 - level) / 2.0
    with np.errstate(invalid="ignore"):
        return (float(np.percentile(reps, 100 * alpha)),
                float(np.percentile(reps, 100 * (1 - alpha))))


def _ratio_bootstrap_ci(num, den, n_boot, level, seed):
    if n_boot <= 0:
        return None
    rng = np.random.default_rng(seed)
    n = len(num)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        d = den[idx].sum()
        reps[b] = num[idx].sum() / d if d > 0 else np.nan
    return _percentile_interval(reps, level)


def exceedance_prob(catalog: Catalog, region: Region, omega: float,
                    n_boot: int = 200, level: float = 0.95, seed: int = 0) -> RiskResult:
    """Probability that an in-region track point exceeds vorticity `omega`.

    Counts every point: sum of in-region exceedances over the count of
    in-region points.  The CI bootstraps storms, not points.

    Raises:
        UndefinedRegionError: no catalog point falls inside the region.
    """
    num, den = _per_storm_counts(catalog, region, omega)
    if den.sum() == 0:
        raise UndefinedRegionError(f"no catalog points in region {region}")
    return RiskResult(
        estimate=float(num.sum() / den.sum()),
        ci=_ratio_bootstrap_ci(num, den, n_boot, level, seed),
        n_num=int(num.sum()),
        n_den=int(den.sum()),
    )


def max_exceedance_prob(catalog: Catalog, region: Region, omega: float,
                        n_boot: int = 200, level: float = 0.95, seed: int = 0) -> RiskResult:
    """Per-storm variant: a storm counts once if its in-region maximum exceeds."""
    num, den = _per_storm_counts(catalog, region, omega)
    storm_hit = (num > 0).astype(float)
    storm_in = (den > 0).astype(float)
    if storm_in.sum() == 0:
        raise UndefinedRegionError(f"no catalog points in region {region}")
    return RiskResult(
        estimate=float(storm_hit.sum() / storm_in.sum()),
        ci=_ratio_bootstrap_ci(storm_hit, storm_in, n_boot, level, seed),
        n_num=int(storm_hit.sum()),
        n_den=int(storm_in.sum()),
    )


def _region_vorticities(catalog: Catalog, region: Region) -> np.ndarray:
    vals = []
    for storm in catalog.storms:
        inside = region.contains(storm.lons, storm.lats)
        if np.any(inside):
            vals.append(storm.vorticities[inside])
    if not vals:
        raise UndefinedRegionError(f"no catalog points in region {region}")
    return np.concatenate(vals)


def return_period(catalog: Catalog, region: Region, omega: float,
                  n_boot: int = 200, level: float = 0.95, seed: int = 0) -> RiskResult:
    """Years per expected exceedance of `omega` inside the region.

    1 / (annual exceedance rate); infinite when nothing in the record
    exceeds `omega` (note "infinite-period").
    """
    vals = _region_vorticities(catalog, region)
    years = catalog.years_of_record
    count = int(np.sum(vals > omega))
    if count == 0:
        return RiskResult(math.inf, None, 0, vals.size, note="infinite-period")
    ci = None
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        reps = np.empty(n_boot)
        storms = catalog.storms
        for b in range(n_boot):
            idx = rng.integers(0, len(storms), size=len(storms))
            c = sum(
                int(np.sum(region.contains(storms[i].lons, storms[i].lats)
                           & (storms[i].vorticities > omega)))
                for i in idx
            )
            reps[b] = years / c if c > 0 else np.inf
        ci = _percentile_interval(reps, level)
    return RiskResult(float(years / count), ci, count, vals.size)


def return_level(catalog: Catalog, region: Region, r_years: float,
                 n_boot: int = 200, level: float = 0.95, seed: int = 0) -> RiskResult:
    """Vorticity exceeded on average once every `r_years` inside the region.

    Inverts the empirical annual exceedance-count step function (lower
    envelope: the smallest vorticity whose exceedance rate is <= 1/r).  When
    fewer than one exceedance is expected in the record (r > years), returns
    NaN with note "extrapolation-unsupported".
    """
    if r_years <= 0:
        raise ValidationError(f"return period must be positive, got {r_years}")
    vals = np.sort(_region_vorticities(catalog, region))
    years = catalog.years_of_record
    target = years / r_years  # allowed number of exceedances in the record
    if target < 1.0:
        return RiskResult(math.nan, None, 0, vals.size, note="extrapolation-unsupported")

    def level_of(sorted_vals):
        n = sorted_vals.size
        # count strictly above each candidate, scanning from the top
        m = min(int(math.floor(target)) + 1, n)
        for i in range(m, 0, -1):
            candidate = sorted_vals[n - i]
            above = n - np.searchsorted(sorted_vals, candidate, side="right")
            if above <= target:
                return float(candidate)
        return float(sorted_vals[-1])

    est = level_of(vals)
    ci = None
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        storms = catalog.storms
        reps = np.empty(n_boot)
        for b in range(n_boot):
            idx = rng.integers(0, len(storms), size=len(storms))
            v = []
            for i in idx:
                inside = region.contains(storms[i].lons, storms[i].lats)
                if np.any(inside):
                    v.append(storms[i].vorticities[inside])
            reps[b] = level_of(np.sort(np.concatenate(v))) if v else np.nan
        ci = _percentile_interval(reps, level)
    return RiskResult(est, ci, int(np.sum(vals > est)), vals.size)


def spatial_density(catalog: Catalog, grid: GridSpec, subset: str = "all",
                    area_weighted: bool = False):
    """Normalized per-cell density of track points.

    `subset` selects all points, genesis (first) or lysis (last) points.
    With `area_weighted`, counts are divided by cos(latitude) of the cell
    centre before normalization.  Returns rows
    (cell, lon_center, lat_center, density) summing to 1.
    """
    if subset not in ("all", "genesis", "lysis"):
        raise ValidationError(f"unknown subset {subset!r}")
    counts: dict = {}
    for storm in catalog.storms:
        if subset == "genesis":
            pts = [storm.points[0]]
        elif subset == "lysis":
            pts = [storm.points[-1]]
        else:
            pts = storm.points
        for p in pts:
            cell = grid_cell((p.lon, p.lat), grid)
            if cell is not None:
                counts[cell] = counts.get(cell, 0) + 1
    rows = []
    weights = {}
    for cell, n in counts.items():
        lon_c, lat_c = grid.cell_center(cell)
        w = n / math.cos(math.radians(lat_c)) if area_weighted else float(n)
        weights[cell] = (lon_c, lat_c, w)
    total = sum(w for (_, _, w) in weights.values())
    for cell in sorted(weights):
        lon_c, lat_c, w = weights[cell]
        rows.append((cell, lon_c, lat_c, w / total))
    return rows


def bootstrap_ci(statistic, catalog: Catalog, n_boot: int = 200, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval of `statistic(catalog)` under storm resampling.

    Storms (not points) are drawn with replacement.  A replicate on which the
    statistic is undefined (exception or NaN) is redrawn up to 10 times, then
    left as NaN, which propagates into the interval.
    """
    if n_boot < 200:
        raise ValidationError(f"need at least 200 bootstrap replicates, got {n_boot}")
    rng = np.random.default_rng(seed)
    storms = catalog.storms
    reps = np.empty(n_boot)
    for b in range(n_boot):
        val = math.nan
        for _ in range(10):
            idx = rng.integers(0, len(storms), size=len(storms))
            resampled = Catalog(
                storms=tuple(storms[i] for i in idx),
                years_of_record=catalog.years_of_record,
            )
            try:
                val = float(statistic(resampled))
            except (ValidationError, UndefinedRegionError, ZeroDivisionError):
                continue
            if not math.isnan(val):
                break
        reps[b] = val
    return _percentile_interval(reps, level)


VARIABLE_GETTERS = {
    "speed": lambda s: s.speeds,
    "direction": lambda s: s.bearings,
    "vorticity": lambda s: s.vorticities,
    "lifetime": lambda s: np.array([float(len(s))]),
}


def catalog_qq_envelope(observed: Catalog, simulated: Catalog, variable,
                        probs=None, level: float = 0.95, n_boot: int = 200,
                        seed: int = 0):
    """QQ envelope between catalogs with storm-level tolerance bands.

    Values within a storm are serially dependent, so each band replicate is a
    resampled set of whole storms from the simulated catalog, of the same
    storm count as the observed catalog (the construction behind
    observed-versus-simulated track comparisons).  `variable` is one of
    "speed", "direction", "vorticity", "lifetime" or a callable
    storm -> values.  Returns rows (p, observed_q, simulated_q, lo, hi,
    inside).
    """
    get = VARIABLE_GETTERS[variable] if isinstance(variable, str) else variable
    if probs is None:
        probs = np.linspace(0.01, 0.99, 99)
    probs = np.asarray(probs, dtype=float)
    obs = np.concatenate([get(s) for s in observed.storms])
    sim = np.concatenate([get(s) for s in simulated.storms])
    obs_q = np.quantile(obs, probs)
    sim_q = np.quantile(sim, probs)
    rng = np.random.default_rng(seed)
    storms = simulated.storms
    reps = np.empty((n_boot, probs.size))
    for b in range(n_boot):
        idx = rng.integers(0, len(storms), size=len(observed.storms))
        reps[b] = np.quantile(np.concatenate([get(storms[i]) for i in idx]), probs)
    alpha = (1.0 - level) / 2.0
    lo = np.percentile(reps, 100 * alpha, axis=0)
    hi = np.percentile(reps, 100 * (1 - alpha), axis=0)
    return [
        (float(p), float(o), float(s), float(a), float(z), bool(a <= o <= z))
        for p, o, s, a, z in zip(probs, obs_q, sim_q, lo, hi)
    ]


def qq_envelope(observed, simulated, probs=None, level: float = 0.95,
                n_boot: int = 200, seed: int = 0):
    """Observed-vs-simulated quantiles with pointwise tolerance bands.

    Bands come from resampling the simulated sample at the observed size.
    Returns rows (p, observed_q, simulated_q, lo, hi, inside).
    """
    observed = np.asarray(observed, dtype=float)
    simulated = np.asarray(simulated, dtype=float)
    if observed.size == 0 or simulated.size == 0:
        raise ValidationError("empty sample")
    if probs is None:
        probs = np.linspace(0.01, 0.99, 99)
    probs = np.asarray(probs, dtype=float)
    obs_q = np.quantile(observed, probs)
    sim_q = np.quantile(simulated, probs)
    rng = np.random.default_rng(seed)
    reps = np.empty((n_boot, probs.size))
    for b in range(n_boot):
        reps[b] = np.quantile(rng.choice(simulated, size=observed.size, replace=True), probs)
    alpha = (1.0 - level) / 2.0
    lo = np.percentile(reps, 100 * alpha, axis=0)
    hi = np.percentile(reps, 100 * (1 - alpha), axis=0)
    return [
        (float(p), float(o), float(s), float(a), float(z), bool(a <= o <= z))
        for p, o, s, a, z in zip(probs, obs_q, sim_q, lo, hi)
    ]
