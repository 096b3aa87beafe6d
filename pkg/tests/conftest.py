import numpy as np
import pytest

from afcn.data import SynthConfig, synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """20 short synthetic utterances (5 per class, 5 sessions x 2 speakers)."""
    out = tmp_path_factory.mktemp("corpus")
    records = synth_corpus(out, SynthConfig(per_class=10, min_duration_s=0.8,
                                            max_duration_s=1.2), seed=7)
    return out, records


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
