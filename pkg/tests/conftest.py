from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from lpgnet.data import Dialogue, SynthSpec, pad_batch, synth_generate
from lpgnet.rng import generator

settings.register_profile("lpgnet", deadline=None, print_blob=True)
settings.load_profile("lpgnet")


def random_dialogues(seed, lengths, f_t=6, f_a=5, num_classes=4):
    rng = generator(seed, "tests", "dialogues")
    return [
        Dialogue(f"d{i}", rng.standard_normal((n, f_t)), rng.standard_normal((n, f_a)),
                 rng.integers(0, num_classes, size=n))
        for i, n in enumerate(lengths)
    ]


def random_batch(seed, lengths, f_t=6, f_a=5, num_classes=4):
    return pad_batch(random_dialogues(seed, lengths, f_t, f_a, num_classes), len(lengths))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_split():
    """A small, easy corpus for quick training tests."""
    spec = SynthSpec(f_t=16, f_a=16, train_dialogues=24, val_dialogues=6, test_dialogues=10, min_len=3, max_len=6)
    return synth_generate(spec, seed=3)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
