import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("ods", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ods")


@pytest.fixture
def memstores():
    """Fresh uniquely named mem stores, dropped afterwards."""
    from ods.endpoint import MemStore

    made = []

    def make(name, **kw):
        full = f"{name}-{os.getpid()}-{len(made)}"
        MemStore.drop(full)
        made.append(full)
        return MemStore.get(full, **kw) if kw else MemStore.get(full)

    yield make
    for n in made:
        MemStore.drop(n)
