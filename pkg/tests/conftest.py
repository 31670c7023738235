import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mtml_reid.datagen import SynthConfig, generate_synthetic  # noqa: E402
from mtml_reid.model import ModelConfig, init_params  # noqa: E402


@pytest.fixture
def small_dataset():
    return generate_synthetic(SynthConfig(num_global_identities=8, num_cameras=3, feature_dim=5,
                                          images_per_identity_per_camera=3, seed=11))


@pytest.fixture
def small_params(small_dataset):
    return init_params(ModelConfig(input_dim=5, feature_dim=4, hidden_dims=[6],
                                   heads=small_dataset.num_identities, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance bookkeeping: each criterion test calls ``criterion(n, text)`` and
# may add measured values with ``note``; the terminal summary prints one line each.
_ACCEPTANCE: dict[str, dict] = {}


class _Criterion:
    def __init__(self, node):
        self.node = node

    def __call__(self, number, text):
        _ACCEPTANCE[self.node.nodeid] = {"n": number, "text": text, "notes": [], "outcome": None}
        return self

    def note(self, msg):
        _ACCEPTANCE[self.node.nodeid]["notes"].append(msg)


@pytest.fixture
def criterion(request):
    return _Criterion(request.node)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _ACCEPTANCE.get(item.nodeid)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"
        entry["seconds"] = rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_ACCEPTANCE.values(), key=lambda e: e["n"]):
        notes = "; ".join(entry["notes"])
        status = entry["outcome"] or "FAIL"
        terminalreporter.write_line(
            f"criterion {entry['n']}: {status} ({entry.get('seconds', 0):.1f}s) {entry['text']}"
            + (f" [{notes}]" if notes else ""))
