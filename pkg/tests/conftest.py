import json
from pathlib import Path

import pytest

from misalign_bench.dataset import ClassTaxonomy
from misalign_bench.parsing import Lexicon

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def taxonomy():
    return ClassTaxonomy()


@pytest.fixture(scope="session")
def lexicon(taxonomy):
    return Lexicon.default(taxonomy)


@pytest.fixture(scope="session")
def reference_columns():
    """Externally reported per-condition columns used as arithmetic fixtures."""
    with open(DATA_DIR / "reference_columns.json", encoding="utf-8") as f:
        return json.load(f)
