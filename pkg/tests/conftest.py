import shutil
from importlib import resources
from pathlib import Path

import pytest

from crisis_concerns.pipeline.cli import init_fixture


def fixture_file(name) -> Path:
    return Path(str(resources.files("crisis_concerns.data").joinpath("fixture", name)))


@pytest.fixture
def fixture_dir(tmp_path) -> Path:
    init_fixture(tmp_path / "fx")
    return tmp_path / "fx"


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One full run on the bundled fixture, shared by read-only tests."""
    from crisis_concerns.pipeline import load_config, run_pipeline

    root = tmp_path_factory.mktemp("run")
    cfg_path = init_fixture(root)
    cfg = load_config(cfg_path)
    run_pipeline(cfg)
    return cfg
