import json
from pathlib import Path

import pytest

from adscreen.rules import load_ruleset

DATA_DIR = Path(__file__).parent.parent / "src" / "adscreen" / "data"
RULESET_DIR = DATA_DIR / "rulesets"


@pytest.fixture(scope="session")
def ruleset_paths():
    return sorted(RULESET_DIR.glob("*.sample"))


@pytest.fixture(scope="session")
def questionnaires(ruleset_paths):
    return {p.stem: load_ruleset(p) for p in ruleset_paths}


@pytest.fixture
def breast_doc():
    return json.loads((RULESET_DIR / "breast.sample").read_text())
