import pytest

from stegosync.langmodel import (
    ab_fixture,
    divergent_fixture,
    plain_fixture,
    rich_fixture,
)
from stegosync.tokenizer import fixture_vocab

KEY = bytes(range(32))


@pytest.fixture
def key():
    return KEY


@pytest.fixture
def ab():
    return ab_fixture()


@pytest.fixture
def ab3():
    return ab_fixture(max_depth=3)


@pytest.fixture
def plain():
    return plain_fixture()


@pytest.fixture
def divergent():
    return divergent_fixture()


@pytest.fixture
def rich():
    return rich_fixture()


@pytest.fixture
def vocab():
    return fixture_vocab()
