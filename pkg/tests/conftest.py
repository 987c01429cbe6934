import numpy as np
import pytest

from hybridmpc import dynamics as dyn


@pytest.fixture(scope="session")
def body80():
    """The benchmark wearer: 80 kg, 1.9 m."""
    return dyn.anthropometry(80.0, 1.9)


@pytest.fixture(scope="session")
def robot80(body80):
    return dyn.robot_params(body80)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_body(rng) -> dyn.BodyParams:
    """A random but physically plausible 3-link body."""
    mass = rng.uniform(40.0, 120.0)
    height = rng.uniform(1.4, 2.1)
    body = dyn.anthropometry(mass, height)
    # Perturb link-level values so the draw is not confined to the table.
    links = []
    for link in body.links:
        m = link.mass * rng.uniform(0.5, 1.5)
        length = link.length * rng.uniform(0.7, 1.3)
        com = length * rng.uniform(0.2, 1.0)
        inertia = link.inertia * rng.uniform(0.3, 2.0)
        links.append(dyn.LinkParams(mass=m, length=length, com_distance=com, inertia=inertia))
    return dyn.BodyParams(links=tuple(links))
