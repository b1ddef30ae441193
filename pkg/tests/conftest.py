from pathlib import Path

import numpy as np
import pytest

NETLISTS = Path(__file__).resolve().parent.parent / "netlists"

GOLDEN = {
    "rc": NETLISTS / "rc.cir",
    "rlc": NETLISTS / "rlc.cir",
    "rl_loop": NETLISTS / "rl_loop.cir",
    "npn_bias": NETLISTS / "npn_bias.cir",
    "acdc": NETLISTS / "bridge_rectifier" / "acdc.cir",
}


@pytest.fixture(scope="session")
def golden_texts():
    return {name: path.read_text() for name, path in GOLDEN.items()}


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def golden_path(name: str) -> Path:
    return GOLDEN[name]
