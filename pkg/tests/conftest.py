import numpy as np
import pytest

from splitz.network import AffineLayer, Network


def make_toy_net(split_index=2):
    """Two-layer example network: W1 = diag(2, 2, 1), W2 = [1, 1, 1], clip at 1."""
    return Network(
        [AffineLayer(np.diag([2.0, 2.0, 1.0]), np.zeros(3)),
         AffineLayer([[1.0, 1.0, 1.0]], [0.0])],
        clip_threshold=1.0,
        split_index=split_index,
    )


def random_net(rng, sizes, split_index=1, clip=1.0, scale=1.0):
    layers = [
        AffineLayer(scale * rng.standard_normal((o, i)) / np.sqrt(i), 0.3 * rng.standard_normal(o))
        for i, o in zip(sizes[:-1], sizes[1:])
    ]
    return Network(layers, clip, split_index)


def linear_left_net(norm, dim=3, hidden=3, classes=2):
    """Net whose first layer always sits inside the unclipped range.

    W1 = norm * I scaled so the first-layer output stays in (0, 1) for inputs
    near zero, bias 0.5 puts every unit strictly inside the linear region,
    so every unit is varying for every ball and L(gamma) = ||W1|| = norm.
    """
    w1 = norm * np.eye(hidden, dim)
    w2 = np.ones((classes, hidden))
    w2[1] *= -1
    return Network([AffineLayer(w1, 0.5 * np.ones(hidden)), AffineLayer(w2, np.zeros(classes))],
                   clip_threshold=1.0, split_index=1)


@pytest.fixture
def toy_net():
    return make_toy_net()


@pytest.fixture
def toy_x():
    return np.array([1.0, -1.0, 0.0])


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
