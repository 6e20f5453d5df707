import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# acceptance verdicts, echoed after the run so captured output cannot hide them
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from tenrmot.data import SceneSpec, generate, load_dataset

    root = generate(SceneSpec(n_train=6, n_test=3, length=5, seed=3), tmp_path_factory.mktemp("tiny"))
    return load_dataset(root)


@pytest.fixture(scope="session")
def tiny_config(tiny_dataset):
    from tenrmot.config import RunConfig

    return RunConfig(dataset=str(tiny_dataset.root), epochs=2, seed=0).replace(
        **{"model.d": 16, "model.n_detect": 6, "model.enc_layers": 1, "model.dec_layers": 1,
           "model.heads": 2, "model.stem_channels": 8, "model.c4": 8, "model.c8": 16})
