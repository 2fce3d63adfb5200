import os
import pytest

from kgrlab.kg import parse_kg
from kgrlab.models import init_model

FIXTURE_SCHEMA = """\
target-by\tProduct\tMalware
mitigate-by\tMalware\tMitigation
"""

FIXTURE_CATEGORIES = """\
P1\tProduct
P2\tProduct
M1\tMalware
M2\tMalware
X1\tMitigation
X2\tMitigation
"""

FIXTURE_TRIPLES = """\
# product -> malware -> mitigation
P1\ttarget-by\tM1
P1\ttarget-by\tM2
P2\ttarget-by\tM1
M1\tmitigate-by\tX1
M2\tmitigate-by\tX2
"""


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale experiment, needs KGRLAB_SLOW=1')


def pytest_collection_modifyitems(config, items):
    if os.environ.get('KGRLAB_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='set KGRLAB_SLOW=1 to run desk-scale experiments')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def fixture_kg():
    return parse_kg(FIXTURE_TRIPLES, FIXTURE_CATEGORIES, FIXTURE_SCHEMA)


@pytest.fixture
def kg():
    """Products, malware and mitigations with five facts."""
    return fixture_kg()


@pytest.fixture
def ids(kg):
    """Name -> id lookup of the fixture's entities and relations."""
    out = {e.name: e.id for e in kg.entities}
    out.update({r.name: r.id for r in kg.relations})
    out.update({c: i for i, c in enumerate(kg.categories)})
    return out


@pytest.fixture
def model(kg):
    return init_model(kg, 4, 2, seed=3)
