import math
import random

import numpy as np
import pytest

from helpers import oracle_world_poses, random_tree
from vnsim.behavior import (
    BehaviorParams,
    BrainBehaviorState,
    InsufficientRobots,
    Mode,
    MorphologyTemplate,
    NoValidSplit,
    Slot,
    StimulusEstimate,
    brain_decide,
    fuse_reports,
    matches_template,
    plan_docking,
    recovery_recruiter,
    recovery_target,
    recruitment_step,
    slot_filled,
    split_plan,
)
from vnsim.body_sim import StimulusReading, sense_stimulus
from vnsim.topology import BodyMap, Capabilities, Pose2, cut, graft, single, world_poses


def chain_tpl(n, name="chain"):
    return MorphologyTemplate(name, (Slot(),) + tuple(Slot(i, 0, 4) for i in range(n - 1)))


def star_tpl(leaves, name="star"):
    return MorphologyTemplate(name, (Slot(),) + tuple(Slot(0, 2 * i, 4) for i in range(leaves)))


def estimate(d, at=0.0):
    return StimulusEstimate((d, 0.0), d, at, 0)


# -- templates --------------------------------------------------------------


def test_template_validation():
    with pytest.raises(ValueError):
        MorphologyTemplate("empty", ())
    with pytest.raises(ValueError):
        MorphologyTemplate("rootless", (Slot(0),))
    with pytest.raises(ValueError):
        MorphologyTemplate("forward", (Slot(), Slot(2), Slot(0)))
    with pytest.raises(ValueError):
        MorphologyTemplate("port", (Slot(), Slot(0, 8, 0)))
    with pytest.raises(ValueError):
        MorphologyTemplate("reuse", (Slot(), Slot(0, 1, 4), Slot(0, 1, 5)))
    with pytest.raises(ValueError):
        MorphologyTemplate("entry", (Slot(), Slot(0, 0, 4), Slot(1, 4, 0)))


def test_realize_then_match():
    tpl = star_tpl(3)
    desc = tpl.realize([5, 6, 7, 8])
    assert matches_template(desc, tpl) and matches_template(desc, tpl, ports=True)
    assert not matches_template(desc, chain_tpl(4))
    assert not matches_template(desc, star_tpl(2))


def test_match_ignores_ports_unless_asked():
    tpl = chain_tpl(3)
    desc = graft(graft(single(0), 0, 3, 7, single(1)), 1, 1, 5, single(2))
    assert matches_template(desc, tpl)
    assert not matches_template(desc, tpl, ports=True)


def test_match_checks_capabilities():
    tpl = MorphologyTemplate("g", (Slot(), Slot(0, 0, 4, (("has_gripper", True),))))
    ok = tpl.realize([0, 1])
    bare = tpl.realize([0, 1], {1: Capabilities(has_gripper=False)})
    assert matches_template(ok, tpl) and not matches_template(bare, tpl)


def test_match_agrees_with_canonical_form_oracle():
    def canon(d):
        return "(" + "".join(sorted(canon(c.sub) for c in d.children)) + ")"

    def canon_tpl(t, i=0):
        return "(" + "".join(sorted(canon_tpl(t, j) for j in t.children_of(i))) + ")"

    rng = random.Random(8)
    for _ in range(200):
        n = rng.randint(1, 6)
        a = random_tree(rng, list(range(n)))
        b = random_tree(rng, list(range(n)))
        parents = {}
        for p, c, _, _ in b.edges():
            parents[c] = p
        # slots must list parents first; breadth order over b gives that
        bfs, queue = [], [b]
        while queue:
            d = queue.pop(0)
            bfs.append(d.root)
            queue.extend(c.sub for c in d.children)
        idx = {nid: i for i, nid in enumerate(bfs)}
        used = {}
        slots = [Slot()]
        for nid in bfs[1:]:
            p = idx[parents[nid]]
            port = used.setdefault(p, 0)
            used[p] += 1
            slots.append(Slot(p, port, 6))
        tpl = MorphologyTemplate("t", tuple(slots))
        assert matches_template(a, tpl) == (canon(a) == canon_tpl(tpl))


# -- fusion and pointing ----------------------------------------------------


def test_fuse_no_reports():
    assert fuse_reports([], single(0)) is None


def test_fuse_brain_only_is_identity():
    r = StimulusReading(1.2, 0.4, 3.0)
    est = fuse_reports([(0, r)], single(0))
    assert est.position == pytest.approx((1.2 * math.cos(0.4), 1.2 * math.sin(0.4)))
    assert (est.distance, est.sensed_at, est.origin) == (1.2, 3.0, 0)


def test_fuse_two_modules_nearer_wins_and_lands_on_truth():
    rng = random.Random(6)
    for _ in range(100):
        desc = random_tree(rng, list(range(5)))
        root = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3))
        truth = world_poses(desc, Pose2(*root))
        stim = (root[0] + rng.uniform(-1, 1), root[1] + rng.uniform(-1, 1))
        a, b = rng.sample(range(5), 2)
        ra, rb = sense_stimulus(truth[a], stim, 10.0), sense_stimulus(truth[b], stim, 10.0)
        est = fuse_reports([(a, ra), (b, rb)], desc)
        assert est.origin == (a if (ra.distance, a) < (rb.distance, b) else b)
        m = oracle_world_poses(desc, root)[desc.root]
        local = np.linalg.solve(m, np.array([stim[0], stim[1], 1.0]))
        assert est.position == pytest.approx((local[0], local[1]), abs=1e-9)


def test_fuse_skips_unknown_origin():
    seen = []
    est = fuse_reports([(9, StimulusReading(0.5, 0.0))], single(0), on_unknown=seen.append)
    assert est is None and seen == [9]


def test_brain_decide_examples():
    p = BehaviorParams()
    st, tw, k = brain_decide(BrainBehaviorState(), estimate(2.0), 0.0, p)
    assert (st.mode, tw, k) == (Mode.IDLE, (0.0, 0.0, 0.0), 0)
    st, tw, k = brain_decide(BrainBehaviorState(), estimate(1.0), 0.0, p)
    assert (st.mode, tw, k) == (Mode.POINTING, (0.0, 0.0, 0.0), p.k_leds)
    st, tw, k = brain_decide(st, estimate(0.5), 0.1, p)
    assert st.mode is Mode.RETREATING and k == p.k_leds
    # stimulus dead ahead along +x, body centroid at the brain
    assert tw[0] < 0 and tw[1] == pytest.approx(0.0) and tw[2] == 0.0
    assert math.hypot(tw[0], tw[1]) == pytest.approx(p.v_max)


def test_brain_decide_hysteresis_and_staleness():
    p = BehaviorParams()
    st = BrainBehaviorState(mode=Mode.RETREATING)
    assert brain_decide(st, estimate(0.85), 0.0, p)[0].mode is Mode.RETREATING
    assert brain_decide(st, estimate(0.9), 0.0, p)[0].mode is Mode.POINTING
    st = BrainBehaviorState(mode=Mode.POINTING)
    assert brain_decide(st, estimate(1.55), 0.0, p)[0].mode is Mode.POINTING
    assert brain_decide(st, estimate(1.61), 0.0, p)[0].mode is Mode.IDLE
    assert brain_decide(st, estimate(1.0, at=0.0), 0.6, p)[0].mode is Mode.IDLE
    assert brain_decide(st, None, 0.0, p)[0].mode is Mode.IDLE


def test_brain_decide_leaves_other_modes_alone():
    st = BrainBehaviorState(mode=Mode.FORMING)
    assert brain_decide(st, estimate(0.5), 0.0) == (st, (0.0, 0.0, 0.0), 0)


def test_retreat_speed_ramps_and_has_floor():
    p = BehaviorParams()
    st = BrainBehaviorState(mode=Mode.RETREATING)
    fast = math.hypot(*brain_decide(st, estimate(0.3), 0.0, p)[1][:2])
    slow = math.hypot(*brain_decide(st, estimate(0.89), 0.0, p)[1][:2])
    assert fast == pytest.approx(p.v_max)
    assert slow == pytest.approx(p.v_max * p.min_retreat_fraction)


# -- recruitment ------------------------------------------------------------


def forming(tpl):
    return BrainBehaviorState(mode=Mode.FORMING, pending_template=tpl)


def test_recruitment_complete_template_goes_idle():
    tpl = chain_tpl(1)
    st, out = recruitment_step(forming(tpl), single(0), [(1, Pose2())], {0: Pose2()})
    assert out == [] and st.mode is Mode.IDLE and st.pending_template is None


def test_recruitment_picks_nearest_robot():
    tpl = chain_tpl(2)
    poses = {0: Pose2()}
    pool = [(1, Pose2(0.17 + 2.0, 0, 0)), (2, Pose2(0.17 + 1.0, 0, 0))]
    st, out = recruitment_step(forming(tpl), single(0), pool, poses)
    assert [a.recruit for a in out] == [2]
    assert (out[0].parent, out[0].port, out[0].entry_port) == (0, 0, 4)
    assert st.open_ports == ((0, 0),)
    # a second call while the recruit is underway assigns nobody new
    st2, out2 = recruitment_step(st, single(0), pool, poses)
    assert out2 == []
    st3 = slot_filled(st2, 1, 2)
    st4, out4 = recruitment_step(st3, graft(single(0), 0, 0, 4, single(2)), pool, poses)
    assert out4 == [] and st4.mode is Mode.IDLE


def test_recruitment_tie_goes_to_lower_id():
    tpl = chain_tpl(2)
    goal_x = 0.17
    pool = [(4, Pose2(goal_x, 1.0, 0)), (3, Pose2(goal_x, -1.0, 0))]
    _, out = recruitment_step(forming(tpl), single(0), pool, {0: Pose2()})
    assert out[0].recruit == 3


def test_recruitment_missing_capability():
    tpl = MorphologyTemplate("g", (Slot(), Slot(0, 0, 4, (("has_gripper", True),))))
    pool = [(1, Pose2(), Capabilities(has_gripper=False))]
    with pytest.raises(InsufficientRobots):
        recruitment_step(forming(tpl), single(0), pool, {0: Pose2()})
    with pytest.raises(ValueError):
        recruitment_step(BrainBehaviorState(), single(0), pool, {0: Pose2()})


# -- split and recovery -----------------------------------------------------


def test_split_chain_in_the_middle():
    desc = chain_tpl(4).realize([0, 1, 2, 3])
    assert split_plan(desc, chain_tpl(2), chain_tpl(2)) == 2


def test_split_star_matches_exhaustive_oracle():
    desc = star_tpl(3).realize([0, 7, 5, 9])
    a, b = star_tpl(2), chain_tpl(1)
    oracle = []
    for n in desc.node_ids():
        if n == desc.root:
            continue
        rest, sub = cut(desc, n)
        if len(sub) == 1 and len(rest) == 3 and all(len(c.sub) == 1 for c in rest.children):
            oracle.append(n)
    assert split_plan(desc, a, b) == min(oracle) == 5


def test_split_impossible():
    with pytest.raises(NoValidSplit):
        split_plan(star_tpl(3).realize([0, 1, 2, 3]), chain_tpl(2), chain_tpl(2))


def test_recovery_star_brain_fault():
    tpl = star_tpl(3)
    out = recovery_target(tpl, {0})
    assert len(out) == 3
    assert recovery_recruiter([single(3), single(1), single(2)]) == 1


def test_recovery_without_failures_is_identity():
    tpl = star_tpl(3)
    assert recovery_target(tpl, set()) is tpl


def test_recovery_chain_removes_leaves_first():
    out = recovery_target(chain_tpl(5), {1, 3})
    assert len(out) == 3
    assert matches_template(out.realize([0, 1, 2]), chain_tpl(3))


def test_recovery_never_drops_the_root():
    out = recovery_target(star_tpl(2), {0, 1, 2, 3})
    assert len(out) == 1 and out.slots[0].parent is None


def test_recovery_result_is_always_a_valid_tree():
    rng = random.Random(3)
    for _ in range(100):
        n = rng.randint(1, 8)
        slots = [Slot()]
        used = {0: set()}
        for i in range(1, n):
            p = rng.randrange(i)
            port = min(set(range(8)) - used[p] - {0})
            used[p].add(port)
            used[i] = {0}
            slots.append(Slot(p, port, 0))
        tpl = MorphologyTemplate("r", tuple(slots))
        failed = set(rng.sample(range(n), rng.randint(0, n)))
        out = recovery_target(tpl, failed)
        assert len(out) == max(1, n - len(failed)) if failed else out is tpl
        # every surviving slot is reachable from the root through surviving parents
        for i, s in enumerate(out.slots):
            assert (s.parent is None) == (i == 0)


# -- composite docking ------------------------------------------------------


def test_docking_plan_avoids_overlap_and_picks_cheapest():
    host_desc = chain_tpl(2).realize([0, 1])
    host_poses = world_poses(host_desc)
    ceding_desc = chain_tpl(2).realize([5, 6])
    ceding_poses = world_poses(ceding_desc, Pose2(0.0, 1.0, 0.0))
    plan = plan_docking(BodyMap(ceding_desc), ceding_poses, BodyMap(host_desc), host_poses)
    ceding_rel = {n: ceding_poses[plan.gripper].inverse().compose(p) for n, p in ceding_poses.items()}
    for n, rel in ceding_rel.items():
        placed = plan.goal.compose(rel)
        for h, hp in host_poses.items():
            if (n, h) != (plan.gripper, plan.target):
                assert math.hypot(placed.x - hp.x, placed.y - hp.y) >= 0.17 - 1e-6
    g = ceding_poses[plan.gripper]
    turn = abs(math.remainder(plan.goal.theta - g.theta, 2 * math.pi))
    assert plan.cost == pytest.approx(math.hypot(plan.goal.x - g.x, plan.goal.y - g.y) + 0.085 * turn)
    assert plan.gripper_port in BodyMap(ceding_desc).free_ports(plan.gripper)
    assert plan.target_port in BodyMap(host_desc).free_ports(plan.target)
