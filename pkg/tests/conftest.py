import numpy as np
import pytest

from dpfreq.matrix import Region, from_points


@pytest.fixture
def three_boxes():
    """3x2x3 matrix cut into three boxes holding 2, 4 and 12 records.

    P1 = [0,1)x[0,2)x[0,2) (4 cells), P2 = [1,3)x[0,2)x[0,2) (8 cells),
    P3 = [0,3)x[0,2)x[2,3) (6 cells).
    """
    points = (
        [(0, 0, 0), (0, 1, 1)]
        + [(1, 0, 0), (2, 1, 1), (2, 0, 1), (1, 1, 0)]
        + [(0, 0, 2)] * 3 + [(1, 1, 2)] * 4 + [(2, 0, 2)] * 5
    )
    m = from_points(points, (3, 2, 3))
    parts = [
        Region(((0, 1), (0, 2), (0, 2))),
        Region(((1, 3), (0, 2), (0, 2))),
        Region(((0, 3), (0, 2), (2, 3))),
    ]
    return m, parts


def random_matrix(rng, extents, n_points):
    pts = np.stack([rng.integers(0, f, n_points) for f in extents], axis=1)
    return from_points(pts, extents)


def random_region(rng, extents):
    bounds = []
    for f in extents:
        a, b = sorted(rng.choice(f + 1, 2, replace=False))
        bounds.append((int(a), int(b)))
    return Region(tuple(bounds))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per criterion and echo it immediately."""
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(criterion, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
