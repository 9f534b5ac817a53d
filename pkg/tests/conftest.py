import numpy as np
import pytest

from visreg.core import FeatureStore, RatingMatrix, Scale


def random_ratings(rng, n_raters, n_items, density=0.6, scale=Scale.BINARY, min_one=True):
    mask = rng.random((n_raters, n_items)) < density
    if min_one and not mask.any():
        mask[0, 0] = True
    r, i = np.nonzero(mask)
    if scale is Scale.BINARY:
        v = rng.choice([-1.0, 1.0], size=len(r))
    else:
        v = rng.integers(1, 11, size=len(r)) * 0.5
    return RatingMatrix(n_raters, n_items, r, i, v, scale)


def random_features(rng, n_items, dim):
    return FeatureStore(rng.standard_normal((n_items, dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one line each; shown at the end of every run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, status: str, detail: str) -> None:
    line = f"criterion {number:2d}: {status}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
