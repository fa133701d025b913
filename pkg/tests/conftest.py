import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

sys.path.insert(0, str(Path(__file__).parent))  # for genlib


@pytest.fixture(scope="session")
def clean_corpus_dir() -> Path:
    return FIXTURES / "corpus_clean"


@pytest.fixture(scope="session")
def dirty_corpus_dir() -> Path:
    return FIXTURES / "corpus_dirty"


@pytest.fixture(scope="session")
def clean_record(clean_corpus_dir):
    from storyground.corpus import read_corpus

    records = list(read_corpus(clean_corpus_dir))
    assert len(records) == 1
    return records[0]


@pytest.fixture(scope="session")
def dirty_record(dirty_corpus_dir):
    from storyground.corpus import read_corpus

    records = list(read_corpus(dirty_corpus_dir))
    assert len(records) == 1
    return records[0]


@pytest.fixture(scope="session")
def clean_sample(clean_record):
    from storyground.corpus import parse_record
    from storyground.diagnostics import ParseMode

    item = parse_record(clean_record, ParseMode.STRICT)
    assert not hasattr(item, "message"), f"clean fixture failed to parse: {item}"
    return item.sample
