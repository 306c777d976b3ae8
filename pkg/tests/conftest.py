import dataclasses
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mcae.config import DecoderConfig, EncoderConfig, micro_config  # noqa: E402


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    """Smallest config that still exercises every code path."""
    return dataclasses.replace(
        micro_config(),
        encoder=EncoderConfig(embed_dim=8, depth=1, heads=1, patch_size=4, image_size=8),
        decoder=DecoderConfig(width=8, depth=1, heads=1),
    )


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
