import numpy as np
import pytest

from delta_sim.generator import GeneratorConfig, generate_corpus
from delta_sim.scenario import AgentMeta, MapData, Scenario, SignalState, SignalTrack, Vec2, validate

ROAD = (
    np.array([[-100.0, -4.0], [400.0, -4.0]]),  # right edge, drivable on its left
    np.array([[400.0, 4.0], [-100.0, 4.0]]),  # left edge, traversed backwards
)
LANE = np.array([[-100.0, 0.0], [400.0, 0.0]])


def straight_scenario(starts, speeds, flags=None, history_len=11, future_len=20, dt=0.1,
                      lateral=None, signal=None, scenario_id="straight"):
    """Agents driving along +x at constant speed on a two-edge straight road.

    ``flags`` is a list of dicts of AgentMeta keyword overrides; agent 1 is the
    ego unless the flags say otherwise.
    """
    n = len(starts)
    total = history_len + future_len
    t = np.arange(total) * dt
    lateral = [0.0] * n if lateral is None else lateral
    pos = np.zeros((total, n, 2))
    vel = np.zeros((total, n, 2))
    for i, (x0, v) in enumerate(zip(starts, speeds)):
        pos[:, i, 0] = x0 + v * t
        pos[:, i, 1] = lateral[i]
        vel[:, i, 0] = v
    flags = flags or [{"is_ego": i == 0, "in_eval_set": True} for i in range(n)]
    agents = tuple(AgentMeta(id=i + 1, **f) for i, f in enumerate(flags))
    signals = ()
    if signal is not None:
        x, states = signal
        signals = (SignalTrack(Vec2(x, 0.0), 0, tuple(SignalState(s) for s in states)),)
    return validate(Scenario(
        id=scenario_id, map=MapData(ROAD, (LANE,)), signals=signals, agents=agents,
        position=pos, heading=np.zeros((total, n)), velocity=vel, valid=np.ones((total, n), bool),
        dt=dt, history_len=history_len, future_len=future_len,
    ))


@pytest.fixture(scope="session")
def lf_corpus():
    return generate_corpus(GeneratorConfig(n=6), seed=3)


@pytest.fixture(scope="session")
def mixed_corpus():
    return generate_corpus(GeneratorConfig(n=6, templates=("leader_follower_signal", "crossing_intersection",
                                                              "lane_merge")), seed=4)


#: criterion number -> "PASS ..." / "FAIL ..." line, filled by the acceptance tests
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
