import json
from dataclasses import replace

import numpy as np
import pytest

from delta_sim.generator import TEMPLATES, GeneratorConfig, generate_corpus
from delta_sim.metrics import nearest_object_distance
from delta_sim.scenario import (AgentMeta, Domain, DomainSelector, ScenarioFormatError, ScenarioValidationError,
                                apply_causal_labels, load_causal_labels, load_scenario, read_corpus, save_scenario,
                                scenario_to_dict, select_domain, sparse_causal_agents, write_scenario)

from conftest import straight_scenario


def minimal_doc():
    n = 91
    return {
        "id": "solo",
        "dt": 0.1,
        "history_len": 11,
        "future_len": 80,
        "map": {"road_edges": [[[0.0, -4.0], [100.0, -4.0]]], "lane_centers": []},
        "signals": [],
        "agents": [{
            "meta": {"id": 7, "kind": "vehicle", "length": 4.5, "width": 2.0, "is_ego": True,
                     "in_eval_set": True, "is_causal": False},
            "track": {"x": [0.1 * i for i in range(n)], "y": [0.0] * n, "heading": [0.0] * n,
                      "vx": [1.0] * n, "vy": [0.0] * n, "valid": [True] * n},
        }],
    }


def test_minimal_scenario_loads():
    s = load_scenario(json.dumps(minimal_doc()))
    assert len(s.agents) == 1
    assert len(s.track(7)) == 91
    assert s.ego_id == 7


def test_two_ego_agents_rejected():
    doc = minimal_doc()
    other = json.loads(json.dumps(doc["agents"][0]))
    other["meta"]["id"] = 8
    doc["agents"].append(other)
    with pytest.raises(ScenarioValidationError, match="multiple ego agents"):
        load_scenario(json.dumps(doc))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["agents"][0]["meta"].update(is_ego=False), "no ego agent"),
    (lambda d: d["agents"][0]["meta"].update(is_causal=True), "both ego and causal"),
    (lambda d: d["agents"][0]["track"].update(heading=[4.0] * 91), "heading not wrapped"),
    (lambda d: d["agents"][0]["track"]["valid"].__setitem__(5, False), "ego track must be valid"),
    (lambda d: d.update(dt=0.0), "dt must be positive"),
    (lambda d: d.update(future_len=81), "track length"),
    (lambda d: d["map"]["road_edges"].append([[1.0, 1.0], [1.0, 1.0]]), "zero-length segment"),
    (lambda d: d["map"]["road_edges"].append([[1.0, 1.0]]), "fewer than 2 points"),
])
def test_validation_names_violated_invariant(mutate, message):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(ScenarioValidationError, match=message):
        load_scenario(json.dumps(doc))


@pytest.mark.parametrize("data", [b"{not json", b"[]", json.dumps({"id": "x"}).encode()])
def test_malformed_input_is_a_format_error(data):
    with pytest.raises(ScenarioFormatError):
        load_scenario(data)


def test_round_trip_is_byte_identical(mixed_corpus):
    for s in mixed_corpus:
        data = save_scenario(s)
        assert save_scenario(load_scenario(data)) == data


def test_file_round_trip(tmp_path, lf_corpus):
    for s in lf_corpus[:2]:
        write_scenario(tmp_path / f"{s.id}.scenario.json", s)
    back = read_corpus(tmp_path)
    assert [b.id for b in back] == sorted(s.id for s in lf_corpus[:2])
    assert save_scenario(back[0]) == save_scenario(lf_corpus[0])


def test_serialized_keys_follow_documented_order(lf_corpus):
    doc = scenario_to_dict(lf_corpus[0])
    assert list(doc) == ["id", "dt", "history_len", "future_len", "map", "signals", "agents"]
    assert list(doc["agents"][0]) == ["meta", "track"]


def three_agent():
    flags = [dict(is_ego=True, in_eval_set=True), dict(in_eval_set=True), dict(is_causal=True)]
    return straight_scenario([0.0, -20.0, -40.0], [10.0] * 3, flags)


def test_select_domain_examples():
    s = three_agent()
    assert select_domain(s, DomainSelector(Domain.UNION, include_ego=False)) == (2, 3)
    assert select_domain(s, DomainSelector(Domain.UNION, include_ego=True)) == (1, 2, 3)
    assert select_domain(s, DomainSelector(Domain.EVAL_SET, include_ego=True)) == (1, 2)
    assert select_domain(s, DomainSelector(Domain.CAUSAL, include_ego=True)) == (3,)
    plain = straight_scenario([0.0, -20.0], [10.0, 10.0])
    assert select_domain(plain, DomainSelector(Domain.CAUSAL)) == ()


def test_union_contains_both_domains(mixed_corpus):
    for s in mixed_corpus:
        for ego in (True, False):
            union = set(select_domain(s, DomainSelector(Domain.UNION, ego)))
            assert set(select_domain(s, DomainSelector(Domain.EVAL_SET, ego))) <= union
            assert set(select_domain(s, DomainSelector(Domain.CAUSAL, ego))) <= union


def test_generator_is_deterministic():
    cfg = GeneratorConfig(n=1, templates=("leader_follower_signal",))
    a = generate_corpus(cfg, seed=7)
    b = generate_corpus(cfg, seed=7)
    assert save_scenario(a[0]) == save_scenario(b[0])
    c = generate_corpus(cfg, seed=8)
    assert save_scenario(a[0]) != save_scenario(c[0])


def test_generator_prefix_property():
    small = generate_corpus(GeneratorConfig(n=2, templates=TEMPLATES), seed=1)
    large = generate_corpus(GeneratorConfig(n=4, templates=TEMPLATES), seed=1)
    assert [save_scenario(s) for s in small] == [save_scenario(s) for s in large[:2]]


def test_generated_tracks_are_consistent(mixed_corpus):
    for s in mixed_corpus:
        h = s.heading
        assert np.all(h > -np.pi) and np.all(h <= np.pi)
        step = np.diff(s.position, axis=0)
        assert np.abs(step - s.velocity[:-1] * s.dt).max() < 1e-9


def test_leader_follower_structure():
    corpus = generate_corpus(GeneratorConfig(n=10), seed=7)
    for s in corpus:
        causal = [a for a in s.agents if a.is_causal]
        assert len(causal) == 1
        e, f = s.ego_index, s.index_of(causal[0].id)
        # the follower starts behind the ego in the same lane
        lon = np.cos(s.heading[0, e]) * (s.position[0, e, 0] - s.position[0, f, 0]) + \
            np.sin(s.heading[0, e]) * (s.position[0, e, 1] - s.position[0, f, 1])
        assert lon > 0
        states = {st.value for sig in s.signals for st in sig.states[s.history_len:]}
        assert "yellow" in states
        # the logged follower stops before contact
        gaps = [nearest_object_distance(s.position[t][[e, f]], s.heading[t][[e, f]], [True, True],
                                        s.lengths[[e, f]], s.widths[[e, f]], 1) for t in range(s.total_len)]
        assert min(gaps) > 0


@pytest.mark.parametrize("cfg", [
    GeneratorConfig(n=0), GeneratorConfig(dt=0.0), GeneratorConfig(templates=("nope",)),
    GeneratorConfig(templates=()), GeneratorConfig(accel_noise=-1.0),
])
def test_generator_rejects_invalid_config(cfg):
    with pytest.raises(ValueError):
        generate_corpus(cfg, seed=0)


def test_causal_label_import():
    s = straight_scenario([0.0, -20.0, -40.0], [10.0] * 3, scenario_id="abc")
    labels = load_causal_labels(json.dumps([{"scenario_id": "abc", "agent_id": 3},
                                            {"scenario_id": "other", "agent_id": 2}]))
    out = apply_causal_labels(s, labels)
    assert [a.is_causal for a in out.agents] == [False, False, True]
    assert apply_causal_labels(s, {("other", 1)}) is s
    with pytest.raises(ScenarioValidationError):
        apply_causal_labels(s, {("abc", 99)})
    with pytest.raises(ScenarioValidationError):
        apply_causal_labels(s, {("abc", 1)})  # the ego cannot be causal
    with pytest.raises(ScenarioFormatError):
        load_causal_labels("[{\"scenario\": 1}]")


def test_sparse_causal_agents_flagged():
    s = three_agent()
    valid = s.valid.copy()
    valid[s.history_len + 5:, 2] = False
    sparse = replace(s, valid=valid)
    assert sparse_causal_agents(sparse) == (3,)
    assert sparse_causal_agents(s) == ()


def test_agent_meta_defaults():
    a = AgentMeta(id=1)
    assert a.kind.value == "vehicle" and not a.is_ego and a.length > 0
