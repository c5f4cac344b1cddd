import pytest

from convbeam.scenario import ScenarioSpec, SourceSpec, azimuth_position, binaural_mic_positions, build_scenario


def short_switching_spec(seed=0):
    """A 4 s miniature of the switching-target layout."""
    return ScenarioSpec(
        mic_positions=binaural_mic_positions(),
        sources=[
            SourceSpec("target1", "target", azimuth_position(0.0), (1.0, 2.5)),
            SourceSpec("target2", "target", azimuth_position(90.0), (2.5, 4.0), voice="female"),
            SourceSpec("interferer", "interferer", azimuth_position(-120.0), (0.5, 4.0)),
        ],
        t60=0.3,
        duration=4.0,
        noise_only=(0.0, 0.5),
        noise_plus_interferer=(0.5, 1.0),
        seed=seed,
    )


@pytest.fixture(scope="session")
def short_bundle():
    return build_scenario(short_switching_spec())


ACCEPTANCE = {}  # criterion number -> (passed, summary line)


def record(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = (passed, line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number][1])
