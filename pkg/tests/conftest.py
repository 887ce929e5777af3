import numpy as np
import pytest

from amplan.env import Environment

# 10x10 m test world, 1 m cells. A wall down column 5 with a one-cell gap in
# document row 5, so the halves connect only through the band y in [4, 5].
CORRIDOR10 = """\
map 10 10 1
.....#....
.....#....
.....#....
.....#....
.....#....
..........
.....#....
.....#....
.....#....
.....#....
"""

EMPTY10 = "map 10 10 1\n" + ("." * 10 + "\n") * 10


@pytest.fixture
def corridor10() -> Environment:
    return Environment.from_text(CORRIDOR10)


@pytest.fixture
def empty10() -> Environment:
    return Environment.from_text(EMPTY10)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
