import csv
import io
import itertools

import numpy as np
import pytest

from bgiteach.bgi import Demonstration
from bgiteach.envs import ORANGE, PINK, PURPLE, BlockRel, DrawTwoBalls
from bgiteach.metrics import (BASE_SITUATIONS, MetricReport, Rate, ambiguity_score,
                              build_ambiguous_situations, compute_gia, compute_gra, compute_ogia, evaluate,
                              inference_accuracy, relations_to_config, teacher_test_set)
from bgiteach.policy import BoltzmannQPolicy, DtbPolicy

SEPARATED = {0: (PURPLE, PURPLE), 1: (PINK, ORANGE), 2: (ORANGE, PINK)}


def separated_dtb_teacher():
    p = DtbPolicy()
    for g, (x, y) in SEPARATED.items():
        p.set_row(0, g, np.eye(3)[x])
        p.set_row(1 + x, g, np.eye(3)[y])
    return p


def dtb_demo(x, y):
    env = DrawTwoBalls()
    s1 = env.step(0, x)
    s2 = env.step(s1, y)
    return Demonstration((0, s1, s2), (x, y), env.achieved(s2))


def test_learner_equal_to_separated_teacher_has_full_gia():
    env = DrawTwoBalls()
    teacher = separated_dtb_teacher()
    rate = compute_gia(teacher.copy(), teacher, env, n=50, rng=np.random.default_rng(0))
    assert rate.trials == 150
    assert rate.value == 1.0


def test_uniform_learner_gia_by_enumeration():
    # every goal ties under a uniform learner, so inference always answers goal 0
    env = DrawTwoBalls()
    uniform = DtbPolicy()
    demos = {g: [dtb_demo(x, y) for x, y in itertools.product(range(3), repeat=2) if g in dtb_outcome_of(x, y)]
             for g in range(3)}
    per_goal = [inference_accuracy(uniform, {g: demos[g]}, range(3)).value for g in range(3)]
    assert per_goal == [1.0, 0.0, 0.0]
    rate = compute_gia(uniform, separated_dtb_teacher(), env, n=40, rng=np.random.default_rng(1))
    assert rate.value == pytest.approx(1 / 3)


def dtb_outcome_of(x, y):
    return DrawTwoBalls().achieved(4 + 3 * x + y)


def test_goal_agnostic_policy_has_ogia_one_over_goal_count():
    env = BlockRel()
    q = BoltzmannQPolicy(env.n_policy_states, env.n_goals, env.n_actions, temperature=0.5)
    q.q[:] = np.random.default_rng(2).normal(size=(env.n_policy_states, 1, env.n_actions))
    rate = compute_ogia(q, env, n=10, rng=np.random.default_rng(3))
    assert rate.excluded_goals == ()
    assert rate.value == pytest.approx(1 / env.n_goals)


def test_gia_on_own_demos_equals_ogia():
    env = BlockRel()
    q = BoltzmannQPolicy(env.n_policy_states, env.n_goals, env.n_actions, temperature=0.3)
    q.q = np.random.default_rng(5).normal(size=q.q.shape)
    a = compute_gia(q, q, env, n=8, rng=np.random.default_rng(9))
    b = compute_ogia(q, env, n=8, rng=np.random.default_rng(9))
    assert a == b


def test_unreachable_goal_is_excluded_from_gia():
    env = DrawTwoBalls()
    teacher = separated_dtb_teacher()
    teacher.set_row(0, 2, np.eye(3)[PURPLE])
    teacher.set_row(1 + PURPLE, 2, np.eye(3)[PURPLE])
    demos = teacher_test_set(env, teacher, [0, 1, 2], 5, np.random.default_rng(0), attempts=5)
    assert demos[2] == []
    rate = inference_accuracy(teacher, demos, [0, 1, 2])
    assert rate.excluded_goals == (2,)
    assert rate.trials == 10


def test_gra_counts_and_validation():
    env = DrawTwoBalls()
    rate = compute_gra(separated_dtb_teacher(), env, n=30, rng=np.random.default_rng(0))
    assert rate == Rate(90, 90)
    with pytest.raises(ValueError):
        compute_gra(DtbPolicy(), env, n=0, rng=np.random.default_rng(0))
    assert np.isnan(Rate(0, 0).value)


def test_uniform_dtb_gra_matches_outcome_table():
    # goal g succeeds on the ordered pairs whose outcome contains g: 6/9, 3/9, 1/9
    env = DrawTwoBalls()
    rng = np.random.default_rng(4)
    n = 20_000
    rates = [compute_gra(DtbPolicy(), env, [g], n, rng).value for g in range(3)]
    np.testing.assert_allclose(rates, [6 / 9, 3 / 9, 1 / 9], atol=0.01)


def test_metric_report_product_and_serialization():
    r = MetricReport(0.5, 0.75, 0.8, 20, 30, seed=3, gia_trials=40)
    assert r.gia_x_gra == pytest.approx(0.4)
    assert MetricReport.from_dict(r.to_dict()) == r
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(MetricReport.CSV_FIELDS)
    w.writerow(r.csv_row())
    row = list(csv.DictReader(io.StringIO(buf.getvalue())))[0]
    assert float(row["gia_x_gra"]) == pytest.approx(0.4)
    assert int(row["seed"]) == 3


def test_evaluate_is_reproducible():
    env = DrawTwoBalls()
    t = separated_dtb_teacher()
    a = evaluate(DtbPolicy(), t, env, 0, 10, 10, np.random.default_rng(7))
    b = evaluate(DtbPolicy(), t, env, 0, 10, 10, np.random.default_rng(7))
    assert a == b
    assert a.gia == pytest.approx(1 / 3)


def test_relations_closure():
    c = relations_to_config(close=[(0, 1), (1, 2)])
    assert c.close_pairs() == {(0, 1), (0, 2), (1, 2)}
    assert relations_to_config(close=[(0, 1), (1, 2)], apart=[2]) is None
    assert relations_to_config(close=[(0, 1)], apart=[2]).close_pairs() == {(0, 1)}


def test_ambiguous_situations_are_closed_under_relabeling():
    env = BlockRel()
    sits = build_ambiguous_situations(env)
    assert len(sits) == 9
    assert len(set(sits)) == len(sits)
    keys = {(env.configs[s.initial_state], env.goal_configs[s.goal_pair[0]], env.goal_configs[s.goal_pair[1]])
            for s in sits}
    for perm in itertools.permutations(range(3)):
        assert {tuple(c.permute(perm) for c in k) for k in keys} == keys
    for s in sits:
        for g in s.goal_pair:
            assert not env.is_success(s.initial_state, g)
            assert any(env.is_success(x, g) for x in env.reachable_within(s.initial_state))
    assert len(BASE_SITUATIONS) == 6


def _shortest_plan(env, start, goal):
    frontier = {start: []}
    seen = {start}
    while frontier:
        nxt = {}
        for s, path in frontier.items():
            if env.is_success(s, goal):
                return path
            for a in range(env.n_actions):
                s2 = env.step(s, a)
                if s2 not in seen:
                    seen.add(s2)
                    nxt[s2] = path + [a]
        frontier = nxt
    raise AssertionError("unreachable")


class _Replay:
    def __init__(self, env, paths):
        self.env, self.paths = env, paths

    def sample_action(self, s, g, rng):
        return self.paths[g][s]


def _plan_policy(env, sit, shared_end):
    """Policy that walks a fixed shortest path to each goal of the pair, or to ``shared_end`` for both."""
    paths = {}
    for g in sit.goal_pair:
        target = shared_end if shared_end is not None else g
        plan = _shortest_plan(env, sit.initial_state, target)
        s, table = sit.initial_state, {}
        for a in plan:
            table[s] = a
            s = env.step(s, a)
        paths[g] = table
    return _Replay(env, paths)


def test_ambiguity_score_extremes():
    env = BlockRel()
    sit = build_ambiguous_situations(env)[0]
    g1, g2 = sit.goal_pair
    # reaching the goal that satisfies both leaves identical final predicates
    both = [g for g in env.goal_space() if all(env.goal_configs[g].satisfies(env.goal_configs[x]) for x in (g1, g2))]
    shared = _plan_policy(env, sit, both[0])
    assert ambiguity_score(shared, env, [sit], 20, np.random.default_rng(0)) == Rate(20, 20)
    separate = _plan_policy(env, sit, None)
    score = ambiguity_score(separate, env, [sit], 20, np.random.default_rng(0))
    assert score.trials == 20
    assert score.value == 0.0
    with pytest.raises(ValueError):
        ambiguity_score(shared, env, [], 5, np.random.default_rng(0))
