"""Scenario files: robots, morphology templates, pre-built bodies and a script.

Scenarios are YAML. ``parse_scenario`` reports problems with line numbers;
``serialize`` writes the canonical form that parses back to an equal object.
Parameters can be overridden from the environment with ``VNSIM_PARAM_<NAME>``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

import yaml

from vnsim.behavior import MorphologyTemplate, Slot
from vnsim.simnet import SimParams
from vnsim.topology import DEFAULT_CAPS, Capabilities, Pose2

ENV_PREFIX = "VNSIM_PARAM_"
ACTIONS = ("Form", "Split", "MergeBodies", "InjectFault", "StimulusPath")
_CAP_FIELDS = tuple(f.name for f in fields(Capabilities))


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RobotSpec:
    id: int
    pose: Pose2 = Pose2()
    caps: Capabilities = DEFAULT_CAPS


@dataclass(frozen=True)
class BodySpec:
    template: str
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class Action:
    at: float
    kind: str
    args: tuple[tuple[str, object], ...] = ()

    def get(self, key, default=None):
        return dict(self.args).get(key, default)


@dataclass
class Scenario:
    name: str = "scenario"
    description: str = ""
    until: float = 10.0
    params: dict = field(default_factory=dict)
    robots: list[RobotSpec] = field(default_factory=list)
    templates: dict[str, MorphologyTemplate] = field(default_factory=dict)
    bodies: list[BodySpec] = field(default_factory=list)
    script: list[Action] = field(default_factory=list)

    def sim_params(self, seed: int | None = None, env: dict | None = None) -> SimParams:
        d = dict(self.params)
        env = os.environ if env is None else env
        for key, value in sorted(env.items()):
            if key.startswith(ENV_PREFIX):
                d[key[len(ENV_PREFIX):].lower()] = value
        if seed is not None:
            d["seed"] = seed
        return SimParams.from_dict(d)


# -- YAML with line numbers --------------------------------------------------


class _LineDict(dict):
    line = 0


class _LineList(list):
    line = 0


class _Loader(yaml.SafeLoader):
    pass


def _map(loader, node):
    out = _LineDict(loader.construct_mapping(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


def _seq(loader, node):
    out = _LineList(loader.construct_sequence(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _seq)


def _line(obj, fallback=0) -> int:
    return getattr(obj, "line", fallback)


class _Errors:
    def __init__(self):
        self.items: list[str] = []

    def add(self, where, msg: str):
        self.items.append(f"line {_line(where)}: {msg}")


def _num(v, where, what, errs, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.add(where, f"{what} must be a number, got {v!r}")
        return None
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            errs.add(where, f"{what} must be an integer, got {v!r}")
            return None
        return int(v)
    if not math.isfinite(v):
        errs.add(where, f"{what} must be finite")
        return None
    return float(v)


def _pose(v, where, errs) -> Pose2:
    if not isinstance(v, list) or len(v) not in (2, 3):
        errs.add(where, f"pose must be [x, y] or [x, y, theta], got {v!r}")
        return Pose2()
    vals = [_num(x, v, "pose component", errs) for x in v]
    if any(x is None for x in vals):
        return Pose2()
    return Pose2(*vals)


def _caps(v, where, errs) -> Capabilities:
    if v is None:
        return DEFAULT_CAPS
    if not isinstance(v, dict):
        errs.add(where, "caps must be a mapping")
        return DEFAULT_CAPS
    kw = {}
    for k, val in v.items():
        if k not in _CAP_FIELDS:
            errs.add(v, f"unknown capability {k!r}")
        elif k == "led_count":
            n = _num(val, v, "led_count", errs, int)
            if n is not None:
                kw[k] = n
        else:
            kw[k] = bool(val)
    try:
        return Capabilities(**kw)
    except ValueError as exc:
        errs.add(v, str(exc))
        return DEFAULT_CAPS


def _template(name, v, errs) -> MorphologyTemplate | None:
    if not isinstance(v, dict) or not isinstance(v.get("slots"), list):
        errs.add(v, f"template {name!r} needs a slots list")
        return None
    slots = []
    for i, s in enumerate(v["slots"]):
        s = s or _LineDict()
        if not isinstance(s, dict):
            errs.add(v["slots"], f"template {name!r} slot {i} must be a mapping")
            return None
        req = s.get("requires") or {}
        if not isinstance(req, dict) or any(k not in _CAP_FIELDS for k in req):
            errs.add(s, f"template {name!r} slot {i}: bad requires {dict(req) if isinstance(req, dict) else req!r}")
            return None
        parent = s.get("parent")
        if parent is not None:
            parent = _num(parent, s, "parent", errs, int)
        via = _num(s.get("via_port", 0), s, "via_port", errs, int)
        entry = _num(s.get("entry_port", 0), s, "entry_port", errs, int)
        if via is None or entry is None:
            return None
        slots.append(Slot(parent, via, entry, tuple(sorted(req.items()))))
    try:
        return MorphologyTemplate(str(name), tuple(slots))
    except ValueError as exc:
        errs.add(v, str(exc))
        return None


_ACTION_ARGS = {
    "Form": {"template": str, "recruiter": int},
    "Split": {"template_a": str, "template_b": str, "body": int},
    "MergeBodies": {"a_root": int, "b_root": int},
    "InjectFault": {"node": int},
    "StimulusPath": {"waypoints": list},
}
_OPTIONAL = {("Split", "body")}


def _action(v, errs) -> Action | None:
    if not isinstance(v, dict):
        errs.add(v, "script entry must be a mapping")
        return None
    kind = v.get("action")
    if kind not in ACTIONS:
        errs.add(v, f"unknown action {kind!r}")
        return None
    at = _num(v.get("at"), v, "at", errs)
    if at is None:
        return None
    spec = _ACTION_ARGS[kind]
    args = {}
    for k in v:
        if k not in ("at", "action") and k not in spec:
            errs.add(v, f"{kind}: unexpected field {k!r}")
    for k, typ in spec.items():
        if k not in v:
            if (kind, k) not in _OPTIONAL:
                errs.add(v, f"{kind}: missing field {k!r}")
            continue
        val = v[k]
        if typ is int:
            val = _num(val, v, k, errs, int)
        elif typ is str:
            val = str(val)
        else:
            pts = []
            for wp in val if isinstance(val, list) else [None]:
                if not isinstance(wp, list) or len(wp) != 3:
                    errs.add(v, "waypoints must be a list of [t, x, y]")
                    return None
                pts.append(tuple(_num(x, v, "waypoint", errs) for x in wp))
            if any(x is None for p in pts for x in p):
                return None
            if any(a[0] > b[0] for a, b in zip(pts, pts[1:])):
                errs.add(v, "waypoint times must be nondecreasing")
            val = tuple(pts)
        if val is None:
            return None
        args[k] = val
    return Action(at, kind, tuple(sorted(args.items())))


def parse_scenario(text: str) -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ParseError(f"{where}{getattr(exc, 'problem', None) or exc}") from None
    if doc is None:
        doc = _LineDict()
    if not isinstance(doc, dict):
        raise ParseError("line 1: scenario must be a mapping")
    errs = _Errors()
    known = {"name", "description", "until", "params", "robots", "templates", "bodies", "script"}
    for k in doc:
        if k not in known:
            errs.add(doc, f"unknown top-level key {k!r}")
    sc = Scenario(name=str(doc.get("name", "scenario")), description=str(doc.get("description", "")))
    if "until" in doc:
        until = _num(doc["until"], doc, "until", errs)
        sc.until = until if until is not None else sc.until

    params = doc.get("params") or {}
    if not isinstance(params, dict):
        errs.add(doc, "params must be a mapping")
        params = {}
    pnames = {f.name for f in fields(SimParams)}
    for k, v in params.items():
        if k not in pnames:
            errs.add(params, f"unknown parameter {k!r}")
        else:
            sc.params[k] = v

    for r in doc.get("robots") or []:
        if not isinstance(r, dict) or "id" not in r:
            errs.add(r, "robot needs an id")
            continue
        nid = _num(r["id"], r, "robot id", errs, int)
        if nid is None:
            continue
        sc.robots.append(RobotSpec(nid, _pose(r.get("pose", [0, 0, 0]), r, errs), _caps(r.get("caps"), r, errs)))

    tdoc = doc.get("templates") or {}
    if not isinstance(tdoc, dict):
        errs.add(doc, "templates must be a mapping")
        tdoc = {}
    for name, t in tdoc.items():
        tpl = _template(name, t, errs)
        if tpl is not None:
            sc.templates[str(name)] = tpl

    for b in doc.get("bodies") or []:
        if not isinstance(b, dict) or not isinstance(b.get("nodes"), list):
            errs.add(b, "body needs a template and a nodes list")
            continue
        nodes = tuple(_num(n, b, "body node", errs, int) for n in b["nodes"])
        sc.bodies.append(BodySpec(str(b.get("template")), nodes))

    for a in doc.get("script") or []:
        act = _action(a, errs)
        if act is not None:
            sc.script.append(act)

    if errs.items:
        raise ParseError("\n".join(errs.items))
    problems = validate_scenario(sc, lines=_script_lines(doc))
    if problems:
        raise ValidationError(problems)
    return sc


def _script_lines(doc) -> list[int]:
    return [_line(a) for a in doc.get("script") or []]


def validate_scenario(sc: Scenario, lines: list[int] | None = None) -> list[str]:
    """Semantic checks: ids exist, templates resolve, script times are nondecreasing."""
    out = []
    lines = lines or [0] * len(sc.script)

    def at(i):
        return f"line {lines[i]}: " if lines[i] else f"script[{i}]: "

    ids = [r.id for r in sc.robots]
    known = set(ids)
    if len(known) != len(ids):
        out.append("duplicate robot ids")
    try:
        sc.sim_params(env={})
    except (KeyError, ValueError, TypeError) as exc:
        out.append(f"bad parameter: {exc}")
    used = set()
    for b in sc.bodies:
        tpl = sc.templates.get(b.template)
        if tpl is None:
            out.append(f"body uses undefined template {b.template!r}")
        elif len(tpl) != len(b.nodes):
            out.append(f"body {list(b.nodes)} does not fit template {b.template!r}")
        for n in b.nodes:
            if n not in known:
                out.append(f"body references unknown robot {n}")
            if n in used:
                out.append(f"robot {n} is in two bodies")
            used.add(n)
    last = float("-inf")
    for i, a in enumerate(sc.script):
        if a.at < last:
            out.append(f"{at(i)}script times must be nondecreasing ({a.at} after {last})")
        last = max(last, a.at)
        for key in ("template", "template_a", "template_b"):
            name = a.get(key)
            if name is not None and name not in sc.templates:
                out.append(f"{at(i)}{a.kind} references undefined template {name!r}")
        for key in ("recruiter", "body", "a_root", "b_root", "node"):
            nid = a.get(key)
            if nid is not None and nid not in known:
                out.append(f"{at(i)}{a.kind} references unknown robot {nid}")
    return out


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- canonical serialization -------------------------------------------------


def _caps_dict(c: Capabilities) -> dict | None:
    d = {f: getattr(c, f) for f in _CAP_FIELDS if getattr(c, f) != getattr(DEFAULT_CAPS, f)}
    return d or None


def to_dict(sc: Scenario) -> dict:
    robots = []
    for r in sc.robots:
        d = {"id": r.id, "pose": [r.pose.x, r.pose.y, r.pose.theta]}
        caps = _caps_dict(r.caps)
        if caps:
            d["caps"] = caps
        robots.append(d)
    templates = {}
    for name, t in sc.templates.items():
        slots = []
        for s in t.slots:
            d = {}
            if s.parent is not None:
                d = {"parent": s.parent, "via_port": s.via_port, "entry_port": s.entry_port}
            if s.requires:
                d["requires"] = dict(s.requires)
            slots.append(d)
        templates[name] = {"slots": slots}
    script = []
    for a in sc.script:
        d = {"at": a.at, "action": a.kind}
        for k, v in a.args:
            d[k] = [list(w) for w in v] if k == "waypoints" else v
        script.append(d)
    return {
        "name": sc.name,
        "description": sc.description,
        "until": sc.until,
        "params": dict(sc.params),
        "robots": robots,
        "templates": templates,
        "bodies": [{"template": b.template, "nodes": list(b.nodes)} for b in sc.bodies],
        "script": script,
    }


def serialize(sc: Scenario) -> str:
    return yaml.safe_dump(to_dict(sc), sort_keys=False, default_flow_style=None, width=100)
