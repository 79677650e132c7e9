import pytest

from stormsim.engine import FitConfig, fit_all
from stormsim.toydata import make_catalog


def fast_config(**overrides):
    base = dict(
        gpd_threshold=1.2,
        min_preproc_points=500,
        min_condex_events=30,
        gcv_points=7,
        gcv_sweeps=1,
        allow_quadratic_preproc=False,
    )
    base.update(overrides)
    return FitConfig(**base)


@pytest.fixture(scope="session")
def toy_catalog():
    return make_catalog(n_storms=120, seed=42)


@pytest.fixture(scope="session")
def fitted_bundle(toy_catalog):
    return fit_all(toy_catalog, fast_config())
