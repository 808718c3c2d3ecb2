import ctypes

import numpy as np
import pytest
from hypothesis import settings

from helpers import DATA

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def _keep_freed_memory():
    # glibc otherwise returns large numpy temporaries to the OS after every
    # step and page-faults them back in; this only changes speed
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    libc.mallopt(-1, 1 << 32)  # M_TRIM_THRESHOLD


_keep_freed_memory()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


# acceptance criteria append (number, title, passed, detail) here
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, passed, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {num:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
