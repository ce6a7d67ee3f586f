"""Executes a scenario script against a ``World``.

Each script entry becomes a task that is started at its time and then
advanced on every physics tick until it completes. Bodies move one
choreography at a time: a Form waits for running splits, merges and
recoveries; a Split or MergeBodies waits for every running task. Stimulus
paths and fault injections never wait.
"""
from __future__ import annotations

import math

from vnsim import behavior as bh
from vnsim.scenario import Action, Scenario
from vnsim.simnet import SimParams, World
from vnsim.topology import Pose2, SubtreeDescription, mated_pose, world_poses
from vnsim.body_sim import Stimulus
from vnsim.trace import TraceSink

def template_from(desc: SubtreeDescription, name: str) -> bh.MorphologyTemplate:
    """The shape of an existing body as a template (preorder slots)."""
    slots = [bh.Slot()]

    def visit(d, idx):
        for c in d.children:
            slots.append(bh.Slot(idx, c.via_port, c.child_entry_port))
            visit(c.sub, len(slots) - 1)

    visit(desc, 0)
    return bh.MorphologyTemplate(name, tuple(slots))


class Task:
    kind = "Task"

    def __init__(self, director: "Director", label: str):
        self.d = director
        self.w = director.world
        self.label = label
        self.done = False
        self.failed = False
        self.claimed: set[int] = set()

    def start(self):
        pass

    def tick(self):
        pass

    def finish(self, **info):
        self.done = True
        self.d.release(self)
        self.w.trace.emit(self.w.clock, None, "ActionDone", action=self.kind, label=self.label, **info)

    def fail(self, why: str):
        self.failed = True
        self.done = True
        self.d.release(self)
        self.w.trace.emit(self.w.clock, None, "Warning", action=self.kind, label=self.label, error=why)

    # hooks
    def on_detach(self, parent: int, child: int):
        pass


class FormTask(Task):
    kind = "Form"

    def __init__(self, director, label, template: bh.MorphologyTemplate, recruiter: int, pool: set[int] | None = None):
        super().__init__(director, label)
        self.template = template
        self.recruiter = recruiter
        self.pool = pool
        self.warned = False
        self.arrived: list[tuple] = []

    def start(self):
        w = self.w
        r = self.recruiter
        if r in w.dead or len(w.body_of(r)) != 1:
            self.fail(f"recruiter {r} is not a free single robot")
            return
        self.d.claim(self, r)
        w.set_mode(r, bh.Mode.FORMING, pending_template=self.template, filled=(), assigned=(), open_ports=())

    def tick(self):
        w = self.w
        r = self.recruiter
        if r in w.dead or not w.nodes[r].is_brain:
            self.fail(f"recruiter {r} lost")
            return
        bstate = w.behavior[r]
        for slot, nid in self.arrived:
            bstate = bh.slot_filled(bstate, slot, nid)
        self.arrived = []
        free = [(n, w.physics.poses[n], w.caps[n]) for n in self.d.free_robots(self.pool)]
        try:
            bstate, plan = bh.recruitment_step(bstate, w.nodes[r].knowledge, free, w.physics.poses)
        except bh.InsufficientRobots as exc:
            if not self.warned:
                self.warned = True
                w.trace.emit(w.clock, r, "Warning", action="Form", label=self.label, error=f"InsufficientRobots: {exc}")
            return
        w.behavior[r] = bstate
        if bstate.mode is bh.Mode.IDLE:
            w.behavior[r] = bh.BrainBehaviorState(mode=bh.Mode.FORMING)
            w.set_mode(r, bh.Mode.IDLE)
            self.finish(brain=r, nodes=sorted(w.body_of(r).nodes()))
            return
        for a in plan:
            self.d.claim(self, a.recruit)
            goal = self._goal(a.parent, a.port, a.entry_port)
            w.start_maneuver(a.recruit, goal, self._arrive(a), label=f"recruit:{a.slot}")

    def _goal(self, parent, port, entry):
        return lambda: poses_of(self.w)[parent].compose(mated_pose(port, entry))

    def _arrive(self, a: bh.Assignment):
        def cb():
            self.w.attach(a.recruit, a.entry_port, a.parent, a.port)
            self.arrived.append((a.slot, a.recruit))
        return cb


def poses_of(world: World) -> dict[int, Pose2]:
    return world.physics.poses


class SplitTask(Task):
    kind = "Split"

    def __init__(self, director, label, a: bh.MorphologyTemplate, b: bh.MorphologyTemplate, body: int | None):
        super().__init__(director, label)
        self.ta, self.tb = a, b
        self.body = body
        self.split_at = None
        self.brain = None

    def start(self):
        w = self.w
        want = len(self.ta) + len(self.tb)
        if self.body is None:
            cands = [r for r, b in sorted(w.bodies.items()) if len(b) == want and r not in w.dead]
            if not cands:
                self.fail(f"no body of {want} robots")
                return
            brain = cands[0]
        else:
            brain = w.root_of(self.body)
        try:
            n = bh.split_plan(w.nodes[brain].knowledge, self.ta, self.tb)
        except bh.NoValidSplit as exc:
            self.fail(f"NoValidSplit: {exc}")
            return
        self.brain, self.split_at = brain, n
        for m in w.body_of(brain).nodes():
            self.d.claim(self, m)
        w.set_mode(brain, bh.Mode.IDLE)
        w.order_split(brain, n)

    def on_detach(self, parent, child):
        if child != self.split_at:
            return
        w = self.w
        poses = w.physics.poses
        rest = w.body_of(self.brain).nodes()
        part = w.body_of(child).nodes()
        rx = sum(poses[n].x for n in rest) / len(rest)
        ry = sum(poses[n].y for n in rest) / len(rest)
        px = sum(poses[n].x for n in part) / len(part)
        py = sum(poses[n].y for n in part) / len(part)
        ux, uy = px - rx, py - ry
        norm = math.hypot(ux, uy) or 1.0
        cur = poses[child]
        c = w.params.split_clearance
        goal = Pose2(cur.x + c * ux / norm, cur.y + c * uy / norm, cur.theta)
        w.start_maneuver(child, lambda: goal, self._separated, label="separate")

    def _separated(self):
        self.finish(brain=self.brain, detached=self.split_at,
                    kept=sorted(self.w.body_of(self.brain).nodes()),
                    parted=sorted(self.w.body_of(self.split_at).nodes()))


class MergeTask(Task):
    kind = "MergeBodies"

    def __init__(self, director, label, a: int, b: int):
        super().__init__(director, label)
        self.a, self.b = a, b
        self.plan = None

    def start(self):
        w = self.w
        if self.a in w.dead or self.b in w.dead:
            self.fail("merge names a failed robot")
            return
        ha, hb = w.root_of(self.a), w.root_of(self.b)
        if ha == hb:
            self.fail("both robots are already in one body")
            return
        host, ceding = w.bodies[ha], w.bodies[hb]
        try:
            plan = bh.plan_docking(ceding, w.physics.poses, host, w.physics.poses)
        except bh.NoDockingPlan as exc:
            self.fail(f"NoDockingPlan: {exc}")
            return
        self.plan, self.host = plan, ha
        for m in host.nodes() + ceding.nodes():
            self.d.claim(self, m)
        w.set_mode(ha, bh.Mode.DOCKING)
        w.set_mode(hb, bh.Mode.DOCKING)
        w.start_cede(hb, plan.gripper, then=self._go)

    def _go(self):
        p = self.plan
        goal = lambda: poses_of(self.w)[p.target].compose(mated_pose(p.target_port, p.gripper_port))
        self.w.start_maneuver(p.gripper, goal, self._dock, label="dock")

    def _dock(self):
        p = self.plan
        w = self.w
        w.attach(p.gripper, p.gripper_port, p.target, p.target_port)
        w.set_mode(self.host, bh.Mode.IDLE)
        self.finish(brain=self.host, nodes=sorted(w.body_of(self.host).nodes()))


class FaultTask(Task):
    """Waits until a failed robot is cut loose; re-forms the body if it was the brain."""

    def __init__(self, director, label, node: int):
        super().__init__(director, label)
        self.node = node
        w = self.w
        body = w.body_of(node)
        self.was_brain = body.root == node and len(body) > 1
        self.kind = "Recover" if self.was_brain else "Excise"
        self.original = template_from(body.tree, f"body-{body.root}")
        self.members = [n for n in body.nodes() if n != node]
        self.t0 = w.clock
        self.sub: list[Task] = []
        self.target = None
        self.recruiter = None
        self.done_via = None

    def start(self):
        for m in self.members:
            self.d.claim(self, m)
        self.w.inject_fault(self.node)
        if not self.members:
            self.finish(failed=self.node)

    def _isolated(self) -> bool:
        w = self.w
        return len(w.body_of(self.node)) == 1 and not any(self.node in k for k in w.mated)

    def tick(self):
        w = self.w
        p = w.params
        if w.clock > self.t0 + p.t_recover + 1e-9:
            w.trace.emit(w.clock, None, "CheckFail", check="recovery", failed=self.node,
                         problems=[f"not recovered within {p.t_recover} s"])
            w.check_failures += 1
            self.fail("recovery deadline missed")
            return
        if not self._isolated() or not w.is_quiescent():
            return
        if not self.was_brain:
            self.finish(failed=self.node, brain=w.root_of(self.members[0]))
            return
        if self.target is None:
            self._plan()
            return
        if self.sub and not self.sub[0].done:
            return
        if self.sub and self.sub[0].failed:
            self.sub.pop(0)
            self.fail("recovery step failed")
            return
        if self.sub:
            self.done_via = self.sub.pop(0)
            if self.sub:
                self.d.start_subtask(self, self.sub[0])
            return
        self._verify()

    def _plan(self):
        w = self.w
        frags: dict[int, SubtreeDescription] = {}
        for m in self.members:
            if m not in w.dead:
                frags[w.root_of(m)] = w.body_of(m).tree
        trees = [frags[r] for r in sorted(frags)]
        self.target = bh.recovery_target(self.original, {self.node}, trees)
        self.recruiter = bh.recovery_recruiter(trees)
        for m in self.members:
            self.d.claimed.pop(m, None)
        self.claimed.clear()
        if all(len(t) == 1 for t in trees):
            self.sub = [FormTask(self.d, self.label + "/form", self.target, self.recruiter, pool=set(frags))]
        else:
            self.sub = [MergeTask(self.d, self.label + f"/merge{r}", self.recruiter, r)
                        for r in sorted(frags) if r != self.recruiter]
        w.trace.emit(w.clock, self.recruiter, "Action", action="Recover", label=self.label,
                     recruiter=self.recruiter, fragments=sorted(frags), slots=len(self.target))
        if self.sub:
            self.d.start_subtask(self, self.sub[0])

    def _verify(self):
        w = self.w
        body = w.body_of(self.recruiter)
        # a Form places every slot exactly; merged fragments only promise the shape
        exact = isinstance(self.done_via, FormTask)
        ok = (w.is_quiescent() and w.nodes[body.root].is_brain
              and bh.matches_template(body.tree, self.target, ports=exact))
        check = "recovery"
        if ok:
            w.trace.emit(w.clock, None, "CheckPass", check=check, brain=body.root, nodes=sorted(body.nodes()))
            self.finish(failed=self.node, brain=body.root, nodes=sorted(body.nodes()))
        else:
            w.check_failures += 1
            w.trace.emit(w.clock, None, "CheckFail", check=check, problems=["body does not match recovery target"])
            self.fail("recovered body does not match target")


class Director:
    def __init__(self, world: World, scenario: Scenario):
        self.world = world
        self.scenario = scenario
        self.active: list[Task] = []
        self.waiting: list[tuple[int, Action]] = []
        self.claimed: dict[int, Task] = {}
        self.tasks: list[Task] = []
        world.listeners.append(self)
        for i, a in enumerate(scenario.script):
            world.schedule(a.at, "action", self._make_release(i, a))

    # -- claims --------------------------------------------------------------

    def claim(self, task: Task, nid: int):
        self.claimed[nid] = task
        task.claimed.add(nid)

    def release(self, task: Task):
        for n in task.claimed:
            if self.claimed.get(n) is task:
                del self.claimed[n]
        task.claimed.clear()
        if task in self.active:
            self.active.remove(task)

    def free_robots(self, pool: set[int] | None = None) -> list[int]:
        w = self.world
        out = []
        for r, body in sorted(w.bodies.items()):
            if len(body) != 1 or r in w.dead or r in self.claimed or r in w.maneuvers:
                continue
            if pool is not None and r not in pool:
                continue
            out.append(r)
        return out

    def start_subtask(self, parent: Task, task: Task):
        self.active.append(task)
        self.tasks.append(task)
        task.start()

    # -- script --------------------------------------------------------------

    def _make_release(self, i: int, a: Action):
        def release():
            self.waiting.append((i, a))
            self._pump()
        return release

    def _blocked(self, kind: str) -> bool:
        if not self.world.is_quiescent():
            return True
        running = [t.kind for t in self.active if not t.done]
        if kind == "Form":
            return any(k != "Form" for k in running)
        return bool(running)

    def _pump(self):
        still = []
        blocked = False
        for i, a in sorted(self.waiting):
            if a.kind in ("InjectFault", "StimulusPath"):
                self._execute(i, a)
            elif blocked or self._blocked(a.kind):
                still.append((i, a))
                blocked = True
            else:
                self._execute(i, a)
        self.waiting = still

    def _execute(self, i: int, a: Action):
        w = self.world
        label = f"{i}:{a.kind}"
        w.trace.emit(w.clock, None, "Action", action=a.kind, label=label, at=a.at, args=dict(a.args))
        sc = self.scenario
        if a.kind == "StimulusPath":
            w.stimulus = Stimulus([tuple(p) for p in a.get("waypoints")])
            w.trace.emit(w.clock, None, "ActionDone", action=a.kind, label=label)
            return
        if a.kind == "Form":
            task = FormTask(self, label, sc.templates[a.get("template")], a.get("recruiter"))
        elif a.kind == "Split":
            task = SplitTask(self, label, sc.templates[a.get("template_a")], sc.templates[a.get("template_b")],
                             a.get("body"))
        elif a.kind == "MergeBodies":
            task = MergeTask(self, label, a.get("a_root"), a.get("b_root"))
        else:
            node = a.get("node")
            if node in w.dead:
                w.trace.emit(w.clock, node, "Warning", action=a.kind, label=label, error="already failed")
                return
            task = FaultTask(self, label, node)
        self.active.append(task)
        self.tasks.append(task)
        task.start()

    # -- world hooks ---------------------------------------------------------

    def on_tick(self, world: World):
        for t in list(self.active):
            if not t.done:
                t.tick()
        if self.waiting:
            self._pump()

    def on_detach(self, world: World, parent: int, child: int):
        for t in list(self.active):
            t.on_detach(parent, child)

    def finish_run(self):
        w = self.world
        for t in self.active:
            if not t.done:
                w.trace.emit(w.clock, None, "Warning", action=t.kind, label=t.label, error="incomplete at end of run")
        for i, a in self.waiting:
            w.trace.emit(w.clock, None, "Warning", action=a.kind, label=f"{i}:{a.kind}", error="never started")


def build_world(sc: Scenario, params: SimParams | None = None, trace: TraceSink | None = None,
                until: float | None = None) -> tuple[World, Director]:
    """Create the world, assemble the pre-built bodies at t=0 and attach a director."""
    params = params or sc.sim_params()
    poses = {r.id: r.pose for r in sc.robots}
    caps = {r.id: r.caps for r in sc.robots}
    for b in sc.bodies:
        tpl = sc.templates[b.template]
        placed = world_poses(tpl.realize(list(b.nodes), caps), poses[b.nodes[0]])
        poses.update(placed)
    w = World([(r.id, r.caps, poses[r.id]) for r in sc.robots], params, trace)
    w.start(t_end=sc.until if until is None else until, scenario=sc.name)
    for b in sc.bodies:
        tpl = sc.templates[b.template]
        for i, s in enumerate(tpl.slots[1:], start=1):
            w.attach(b.nodes[i], s.entry_port, b.nodes[s.parent], s.via_port, snap=False)
    return w, Director(w, sc)


def run_scenario(sc: Scenario, params: SimParams | None = None, until: float | None = None,
                 trace: TraceSink | None = None) -> tuple[World, Director]:
    until = sc.until if until is None else until
    w, d = build_world(sc, params, trace, until)
    w.run_until(until)
    if w._dirty and w.is_quiescent():
        w.run_checks()
    d.finish_run()
    return w, d
