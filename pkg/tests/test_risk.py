import math

import numpy as np
import pytest

from stormsim.catalog import Catalog, GridSpec, StormTrack, TrackPoint, build_grid
from stormsim.errors import UndefinedRegionError, ValidationError
from stormsim.risk import (
    Region,
    bootstrap_ci,
    exceedance_prob,
    max_exceedance_prob,
    qq_envelope,
    return_level,
    return_period,
    spatial_density,
)


def storm_from_arrays(sid, lons, lats, vorts):
    pts = tuple(
        TrackPoint(lon=lo, lat=la, time_index=i, vorticity=v)
        for i, (lo, la, v) in enumerate(zip(lons, lats, vorts))
    )
    return StormTrack(id=sid, points=pts)


def random_catalog(rng, n_storms=25, years=10.0):
    storms = []
    for i in range(n_storms):
        n = rng.integers(8, 20)
        lons = rng.uniform(-20.0, 10.0, n)
        lats = rng.uniform(45.0, 65.0, n)
        vorts = rng.gamma(3.0, 1.0, n) + 0.5
        storms.append(storm_from_arrays(f"s{i}", lons, lats, vorts))
    return Catalog(storms=tuple(storms), years_of_record=years)


def brute_exceedance(catalog, region, omega):
    """Independent double-loop recount of the exceedance probability."""
    num = den = 0
    for storm in catalog.storms:
        for p in storm.points:
            if region.lon_min < p.lon < region.lon_max and region.lat_min < p.lat < region.lat_max:
                den += 1
                if p.vorticity > omega:
                    num += 1
    return num, den


def brute_max_exceedance(catalog, region, omega):
    num = den = 0
    for storm in catalog.storms:
        in_pts = [
            p for p in storm.points
            if region.lon_min < p.lon < region.lon_max and region.lat_min < p.lat < region.lat_max
        ]
        if in_pts:
            den += 1
            if max(p.vorticity for p in in_pts) > omega:
                num += 1
    return num, den


UK = Region()


# ------------------------------------------------------------- exceedance

def test_exceedance_toy_hand_count():
    storm = storm_from_arrays(
        "a",
        [-5.0, -4.0, -3.0, 20.0, 21.0, 22.0, 23.0, 24.0],
        [55.0, 55.0, 55.0, 55.0, 55.0, 55.0, 55.0, 55.0],
        [5.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0, 9.0],
    )
    cat = Catalog(storms=(storm,), years_of_record=1.0)
    res = exceedance_prob(cat, UK, omega=2.0, n_boot=0)
    assert res.estimate == pytest.approx(1.0 / 3.0)
    assert (res.n_num, res.n_den) == (1, 3)


def test_exceedance_below_all_values():
    rng = np.random.default_rng(0)
    cat = random_catalog(rng)
    res = exceedance_prob(cat, UK, omega=0.0, n_boot=0)
    assert res.estimate == 1.0


def test_exceedance_matches_brute_force_on_random_catalogs():
    rng = np.random.default_rng(1)
    for trial in range(100):
        cat = random_catalog(rng, n_storms=int(rng.integers(3, 12)))
        omega = float(rng.uniform(0.5, 8.0))
        region = Region(
            lon_min=float(rng.uniform(-20, -5)), lon_max=float(rng.uniform(0, 10)),
            lat_min=float(rng.uniform(45, 52)), lat_max=float(rng.uniform(55, 65)),
        )
        num, den = brute_exceedance(cat, region, omega)
        if den == 0:
            with pytest.raises(UndefinedRegionError):
                exceedance_prob(cat, region, omega, n_boot=0)
            continue
        res = exceedance_prob(cat, region, omega, n_boot=0)
        assert res.estimate == num / den
        assert (res.n_num, res.n_den) == (num, den)


def test_exceedance_undefined_region():
    rng = np.random.default_rng(2)
    cat = random_catalog(rng)
    far = Region(lon_min=100.0, lon_max=110.0, lat_min=0.0, lat_max=10.0)
    with pytest.raises(UndefinedRegionError):
        exceedance_prob(cat, far, omega=1.0, n_boot=0)


# ---------------------------------------------------------- per-storm max

def test_max_exceedance_counts_storm_once():
    storm = storm_from_arrays(
        "a", [-5.0] * 8, [55.0] * 8, [9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 1.0, 1.0]
    )
    cat = Catalog(storms=(storm,), years_of_record=1.0)
    res = max_exceedance_prob(cat, UK, omega=2.0, n_boot=0)
    assert res.estimate == 1.0
    assert res.n_num == 1 and res.n_den == 1


def test_max_exceedance_equals_pointwise_when_single_points():
    rng = np.random.default_rng(3)
    storms = []
    for i in range(30):
        lons = np.concatenate([[-5.0], np.full(7, 50.0)])  # one in-region point
        lats = np.full(8, 55.0)
        vorts = rng.gamma(3.0, 1.0, 8) + 0.5
        storms.append(storm_from_arrays(f"s{i}", lons, lats, vorts))
    cat = Catalog(storms=tuple(storms), years_of_record=5.0)
    a = exceedance_prob(cat, UK, omega=3.0, n_boot=0)
    b = max_exceedance_prob(cat, UK, omega=3.0, n_boot=0)
    assert a.estimate == b.estimate


def test_max_exceedance_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(30):
        cat = random_catalog(rng, n_storms=int(rng.integers(3, 10)))
        omega = float(rng.uniform(1.0, 8.0))
        num, den = brute_max_exceedance(cat, UK, omega)
        if den == 0:
            continue
        res = max_exceedance_prob(cat, UK, omega, n_boot=0)
        assert res.estimate == num / den


# ------------------------------------------------------- periods / levels

def test_return_period_definition():
    # 10 years of record, 5 exceedances -> 2-year return period
    lons = np.full(10, -5.0)
    lats = np.full(10, 55.0)
    vorts = [9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 1.0, 1.0, 1.0, 1.0]
    cat = Catalog(storms=(storm_from_arrays("a", lons, lats, vorts),), years_of_record=10.0)
    res = return_period(cat, UK, omega=2.0, n_boot=0)
    assert res.estimate == pytest.approx(2.0)


def test_return_period_infinite_marker():
    rng = np.random.default_rng(5)
    cat = random_catalog(rng)
    res = return_period(cat, UK, omega=1e9, n_boot=0)
    assert math.isinf(res.estimate) and res.note == "infinite-period"


def test_return_level_round_trip():
    rng = np.random.default_rng(6)
    cat = random_catalog(rng, n_storms=40, years=20.0)
    for r in (0.5, 1.0, 2.0, 5.0):
        lvl = return_level(cat, UK, r, n_boot=0)
        m = lvl.n_num + 1
        per = return_period(cat, UK, lvl.estimate, n_boot=0)
        assert per.estimate >= r * (1 - 1.0 / m) - 1e-9
        # the step inverse can only overshoot by one exceedance step
        assert per.estimate <= cat.years_of_record


def test_return_level_extrapolation_marker():
    rng = np.random.default_rng(7)
    cat = random_catalog(rng, years=10.0)
    res = return_level(cat, UK, r_years=50.0, n_boot=0)
    assert math.isnan(res.estimate) and res.note == "extrapolation-unsupported"


def test_return_level_monotone_in_r():
    rng = np.random.default_rng(8)
    cat = random_catalog(rng, n_storms=60, years=30.0)
    levels = [return_level(cat, UK, r, n_boot=0).estimate for r in (0.5, 1, 2, 5, 10)]
    assert all(a <= b + 1e-12 for a, b in zip(levels, levels[1:]))


def test_return_period_monotone_in_omega():
    rng = np.random.default_rng(9)
    cat = random_catalog(rng, n_storms=60, years=30.0)
    periods = [return_period(cat, UK, w, n_boot=0).estimate for w in (1.0, 3.0, 5.0, 8.0)]
    assert all(a <= b + 1e-12 for a, b in zip(periods, periods[1:]))


# ------------------------------------------------------------- densities

def test_spatial_density_single_point():
    cat = Catalog(
        storms=(storm_from_arrays("a", [-5.0] * 8, [55.0] * 8, [2.0] * 8),),
        years_of_record=1.0,
    )
    grid = GridSpec(lon0=-180.0, lat0=-90.0, dlon=8.0, dlat=4.0)
    rows = spatial_density(cat, grid, subset="genesis")
    assert len(rows) == 1
    assert rows[0][3] == 1.0


def test_spatial_density_sums_to_one(toy_catalog):
    grid = build_grid(toy_catalog)
    for subset in ("all", "genesis", "lysis"):
        rows = spatial_density(toy_catalog, grid, subset=subset)
        assert sum(r[3] for r in rows) == pytest.approx(1.0, abs=1e-12)
    rows_w = spatial_density(toy_catalog, grid, area_weighted=True)
    assert sum(r[3] for r in rows_w) == pytest.approx(1.0, abs=1e-12)


def test_spatial_density_genesis_lysis_partition(toy_catalog):
    grid = build_grid(toy_catalog)
    n = len(toy_catalog.storms)
    for subset in ("genesis", "lysis"):
        rows = spatial_density(toy_catalog, grid, subset=subset)
        counts = [round(r[3] * n) for r in rows]
        assert sum(counts) == n


# ------------------------------------------------------------- bootstrap

def test_bootstrap_constant_statistic_zero_width(toy_catalog):
    lo, hi = bootstrap_ci(lambda c: 42.0, toy_catalog, n_boot=200, seed=0)
    assert lo == hi == 42.0


def test_bootstrap_deterministic(toy_catalog):
    stat = lambda c: c.n_points() / len(c)
    a = bootstrap_ci(stat, toy_catalog, n_boot=200, seed=1)
    b = bootstrap_ci(stat, toy_catalog, n_boot=200, seed=1)
    assert a == b


def test_bootstrap_resamples_storms_not_points(toy_catalog):
    sizes = set()
    bootstrap_ci(lambda c: sizes.add(c.n_points()) or 0.0, toy_catalog, n_boot=200, seed=2)
    assert len(sizes) > 1  # storm lengths differ, so point counts vary


def test_bootstrap_requires_200():
    with pytest.raises(ValidationError):
        bootstrap_ci(lambda c: 0.0, None, n_boot=100)


def test_bootstrap_coverage_of_known_probability():
    # desk-scale version of the coverage experiment (full run in acceptance)
    rng = np.random.default_rng(10)
    true_p = 0.3
    cover = 0
    n_rep = 60
    for rep in range(n_rep):
        storms = []
        for i in range(40):
            n = 10
            lons = np.full(n, -5.0)
            lats = np.full(n, 55.0)
            vorts = np.where(rng.uniform(size=n) < true_p, 5.0, 1.0) + rng.uniform(0, 0.1, n)
            storms.append(storm_from_arrays(f"s{i}", lons, lats, vorts))
        cat = Catalog(storms=tuple(storms), years_of_record=10.0)
        res = exceedance_prob(cat, UK, omega=3.0, n_boot=200, seed=rep)
        if res.ci[0] <= true_p <= res.ci[1]:
            cover += 1
    assert cover / n_rep >= 0.85


# ------------------------------------------------------------- envelopes

def test_qq_identical_samples_inside():
    rng = np.random.default_rng(11)
    x = rng.normal(size=2000)
    rows = qq_envelope(x, x.copy(), n_boot=200, seed=0)
    assert all(r[5] for r in rows)


def test_qq_shifted_sample_detected():
    rng = np.random.default_rng(12)
    x = rng.normal(size=2000)
    rows = qq_envelope(x, x + 3.0, n_boot=200, seed=0)
    outside = sum(1 for r in rows if not r[5])
    assert outside > len(rows) / 2


def test_qq_band_width_tracks_monte_carlo_error():
    # bands resample the simulated pool at the observed size, so their width
    # is the Monte Carlo error of an observed-size sample: ~1/sqrt(n_obs)
    rng = np.random.default_rng(13)
    sim = rng.normal(size=50_000)
    width = lambda rows: np.mean([r[4] - r[3] for r in rows])
    w_small = width(qq_envelope(rng.normal(size=200), sim, n_boot=200, seed=1))
    w_big = width(qq_envelope(rng.normal(size=6400), sim, n_boot=200, seed=1))
    assert w_big < w_small / 3.0  # expect ~1/sqrt(32) ~ 0.18 ratio
