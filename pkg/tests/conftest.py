import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssta.dataset import generate_dataset
from ssta.nn import TrainConfig, build_network, train

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# desk fixture: frozen seed, size and split used by the acceptance suite
DESK_SEED = 0
DESK_COUNT = 1250
DESK_SIZE = 64
DESK_CLASSES = 4
DESK_ATTACKED = 200

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_net():
    """Untrained 24x24 network; enough for shape and gradient tests."""
    return build_network((24, 24, 3), 3, seed=5, conv_channels=(4, 6, 8), hidden=8)


@pytest.fixture(scope="session")
def desk_data():
    return generate_dataset(DESK_SEED, DESK_COUNT, DESK_SIZE, DESK_CLASSES)


@pytest.fixture(scope="session")
def desk_model(desk_data):
    """Victim classifier trained with the default config on the desk dataset."""
    tr_x, tr_y, _ = desk_data.split("train")
    te_x, te_y, _ = desk_data.split("test")
    net, report = train(tr_x, tr_y, TrainConfig(), num_classes=DESK_CLASSES, test=(te_x, te_y))
    return net, report


@pytest.fixture(scope="session")
def desk_attacks(desk_data, desk_model):
    """Default-config attacks on the first 200 correctly classified test images, timed."""
    from ssta.attack import AttackConfig, ssta_attack

    net, _ = desk_model
    te_x, te_y, _ = desk_data.split("test")
    preds = net.predict_batch(te_x)
    idx = np.flatnonzero(preds == te_y)[:DESK_ATTACKED]
    cfg = AttackConfig()
    start = time.perf_counter()
    results = [ssta_attack(net, te_x[i], int(te_y[i]), cfg) for i in idx]
    elapsed = time.perf_counter() - start
    return idx, results, elapsed
