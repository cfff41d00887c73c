import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evidencesql.feature_store import canonical_manifest, ingest_case_dir

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def manifest():
    return canonical_manifest()


@pytest.fixture(scope="session")
def demo_case_dir():
    return FIXTURES / "demo_case"


@pytest.fixture(scope="session")
def demo_bundle(manifest, demo_case_dir):
    return ingest_case_dir(manifest, demo_case_dir)


@pytest.fixture(scope="session")
def manifest_path():
    import evidencesql.fixtures

    return Path(evidencesql.fixtures.__path__[0]) / "manifest.json"


@pytest.fixture(scope="session")
def eval_dataset(tmp_path_factory):
    from datasets import build_eval_dataset

    root = tmp_path_factory.mktemp("eval_fixture")
    return build_eval_dataset(root)


@pytest.fixture(scope="session")
def training_split(tmp_path_factory):
    from datasets import build_training_split

    root = tmp_path_factory.mktemp("training_fixture")
    return build_training_split(root)
