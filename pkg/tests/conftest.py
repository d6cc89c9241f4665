import numpy as np
import pytest

from tge.token_model import GridLayout, TokenGrid


def random_grid(rng, rows, cols, dim, tag=""):
    return TokenGrid(rng.normal(size=(rows, cols, dim)).astype(np.float32), tag)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def single_layout():
    return GridLayout(336, 336)


@pytest.fixture(scope="session")
def mosaic_layout():
    return GridLayout(8064, 8064)


_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title)(passed, detail)``."""

    def start(number, title):
        def finish(passed, detail=""):
            _CRITERIA[number] = (title, bool(passed), detail)
            print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
            assert passed, f"criterion {number} failed: {detail}"

        return finish

    return start


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
