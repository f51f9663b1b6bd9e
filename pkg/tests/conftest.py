import pytest

from simgat.synthcity import ScenarioSpec, desk_scenario, generate


@pytest.fixture(scope="session")
def desk():
    """4 clusters x 6 neighborhoods x 14 days."""
    return generate(desk_scenario(7))


@pytest.fixture(scope="session")
def default_synth():
    return generate(ScenarioSpec())


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, after the normal summary."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num:>2}: {verdict}  {detail}")
