"""Shared fixtures: phantom volumes reused across test modules."""

import numpy as np
import pytest

from myofiber.phantom import PhantomSpec, generate_annulus_phantom

# one human-readable pass/fail line per acceptance criterion, echoed at the
# end of the run (populated by test_acceptance.py)
ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def linear_phantom():
    """+60 -> -60 degree linear helix annulus on a 48x48x36 grid."""
    spec = PhantomSpec(
        inner_radius=10.0, outer_radius=20.0, height=30.0,
        ha_endo=60.0, ha_epi=-60.0, dims=(48, 48, 36),
    )
    vol, mask = generate_annulus_phantom(spec)
    return spec, vol, mask


@pytest.fixture(scope="session")
def zero_helix_phantom():
    """Purely circumferential fibers: every streamline should orbit the axis."""
    spec = PhantomSpec(
        inner_radius=10.0, outer_radius=20.0, height=20.0,
        ha_endo=0.0, ha_epi=0.0, dims=(48, 48, 24),
    )
    vol, mask = generate_annulus_phantom(spec)
    return spec, vol, mask
