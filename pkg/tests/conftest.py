import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from weightprint import ForgeConfig, generate_base  # noqa: E402

TINY = ForgeConfig(vocab_size=8, hidden=4, layers=2, head_dim=4, ffn_dim=8)
SMALL = ForgeConfig(vocab_size=64, hidden=16, layers=3, head_dim=8, ffn_dim=32)
DESK = ForgeConfig(vocab_size=512, hidden=64, layers=3, head_dim=32, ffn_dim=128)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_base():
    return generate_base(SMALL)


@pytest.fixture(scope="session")
def desk_base():
    return generate_base(DESK)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
