import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdata import write_image_folder  # noqa: E402


@pytest.fixture(scope="session")
def tiny_folder(tmp_path_factory):
    """Small 3-class image folder shared by data/cli tests."""
    root = tmp_path_factory.mktemp("tiny") / "components"
    return write_image_folder(root, {"bluetooth_module": 8, "humidity_sensor": 8,
                                     "transistor": 8}, seed=7)


@pytest.fixture(scope="session")
def source_folder(tmp_path_factory):
    """5-class source-task folder used for pretraining in CLI tests."""
    root = tmp_path_factory.mktemp("source") / "parts"
    counts = {"capacitor": 6, "heat_sink": 6, "potentiometer": 6,
              "relay": 6, "solenoid": 6}
    return write_image_folder(root, counts, seed=11)
