import numpy as np
import pytest

from xfr.data import FaceDataset
from xfr.model import Architecture, FaceModel
from xfr.synth import generate_dataset

# 32x32 input, four stride-2 stages -> 2x2 feature maps with 8 channels
TINY = Architecture(img_ch=1, resolution=32, enc_widths=(4, 8, 8, 8), dec_widths=(8, 8, 4), num_identities=3)


@pytest.fixture
def tiny_arch():
    return TINY


@pytest.fixture
def tiny_model():
    return FaceModel.create(TINY, seed=0)


@pytest.fixture(scope="session")
def face_model():
    """Untrained model with the tiny widths at the full 64x64 input size."""
    return FaceModel.create(Architecture(img_ch=1, resolution=64, enc_widths=(4, 8, 8, 8), dec_widths=(8, 8, 4), num_identities=3), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Six synthetic identities with four 64x64 images each."""
    return FaceDataset.scan(generate_dataset(tmp_path_factory.mktemp("faces"), n_identities=6, per_identity=4, seed=5))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        _ACCEPTANCE[criterion] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
