import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

torch.set_num_threads(1)

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    from hae.data import HierSpec, gen_hierarchy

    return gen_hierarchy(HierSpec(per_class=20, dim=16))


@pytest.fixture(scope="session")
def small_trained(small_dataset):
    """Quick model on a reduced dataset; for plumbing tests, not for trends."""
    from hae.model import HaeModel
    from hae.train import TrainConfig, default_model_config, fit

    cfg = default_model_config(small_dataset, backbone_dim=12, euclid_dim=8, ball_dim=4, hidden=16,
                               probe_dim=16)
    model, ckpt, history = fit(HaeModel(cfg), small_dataset, TrainConfig(steps=150, batch_size=8))
    return model, ckpt, history


@pytest.fixture(scope="session")
def default_run():
    """The default desk-scale training run (default data, model and optimiser settings)."""
    import time

    from hae.data import gen_hierarchy
    from hae.model import HaeModel
    from hae.train import TrainConfig, default_model_config, fit

    ds = gen_hierarchy()
    start = time.perf_counter()
    model, ckpt, history = fit(HaeModel(default_model_config(ds)), ds, TrainConfig())
    return {"dataset": ds, "model": model, "ckpt": ckpt, "history": history,
            "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def default_oracle(default_run):
    from hae.evaluation import train_oracle

    return train_oracle(default_run["dataset"])


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def report_criterion():
    """Record ``criterion N: PASS|FAIL detail`` for the end-of-run summary, then return the verdict."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
