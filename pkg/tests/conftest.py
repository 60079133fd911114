import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crowdrank.core import Question  # noqa: E402
from crowdrank.judges import JudgeGateway, SimulatedBackend  # noqa: E402
from crowdrank.sim import equally_spaced_population, make_questions  # noqa: E402


@pytest.fixture
def population10():
    return equally_spaced_population(10)


@pytest.fixture
def questions5():
    return make_questions(5)


def sim_gateway(population, seed=0, noise_sd=0.5, temperature=1.0, **kw):
    backend = SimulatedBackend(population, seed=seed, noise_sd=noise_sd, temperature=temperature, **kw)
    return JudgeGateway(backend, order_seed=seed)


@pytest.fixture
def q1():
    return Question("q1", "general", "What is two plus two?")
