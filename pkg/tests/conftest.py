import numpy as np
import pytest

from foulscope.core import EmbeddedFrame, PrototypeBank


def frame_from_rows(rows, grid=None, frame_id="f", t=0.0, glob=None):
    rows = np.asarray(rows, dtype=np.float64)
    h, w = grid or (1, rows.shape[0])
    g = rows.mean(axis=0) if glob is None else glob
    if np.linalg.norm(g) < 1e-9:
        g = rows[0]
    return EmbeddedFrame(frame_id, t, h, w, rows, g)


def two_class_bank(neg, pos, tau=0.1, names=("no_fouling", "fouling")):
    return PrototypeBank(((names[0], True), (names[1], False)),
                         (np.atleast_2d(neg), np.atleast_2d(pos)), tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
