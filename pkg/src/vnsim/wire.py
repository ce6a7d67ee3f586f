"""Tagged-record encoding of messages and subtree descriptions.

Field order is fixed so encoded records serialize to identical bytes on
every run.
"""
from __future__ import annotations

from vnsim.body_sim import ModuleCommand, StimulusReading
from vnsim.protocol import (
    ActuatorCommand,
    CedeOrder,
    DetachOrder,
    Heartbeat,
    Hop,
    LedCommand,
    MergeAnnounce,
    SensorReport,
    SplitNotice,
)
from vnsim.topology import DEFAULT_CAPS, Capabilities, ChildLink, Pose2, SubtreeDescription


def encode_pose(p: Pose2) -> list[float]:
    return [p.x, p.y, p.theta]


def decode_pose(v) -> Pose2:
    return Pose2(float(v[0]), float(v[1]), float(v[2]))


def encode_caps(c: Capabilities) -> list:
    return [c.has_wheels, c.led_count, c.has_stimulus_sensor, c.has_gripper]


def decode_caps(v) -> Capabilities:
    return Capabilities(bool(v[0]), int(v[1]), bool(v[2]), bool(v[3]))


def encode_desc(d: SubtreeDescription) -> dict:
    out: dict = {"id": d.root}
    if d.caps != DEFAULT_CAPS:
        out["caps"] = encode_caps(d.caps)
    if d.children:
        out["children"] = [
            {
                "via": c.via_port,
                "entry": c.child_entry_port,
                "pose": encode_pose(c.relative_pose),
                "sub": encode_desc(c.sub),
            }
            for c in d.children
        ]
    return out


def decode_desc(v: dict) -> SubtreeDescription:
    caps = decode_caps(v["caps"]) if "caps" in v else DEFAULT_CAPS
    kids = tuple(
        ChildLink(int(c["via"]), int(c["entry"]), decode_pose(c["pose"]), decode_desc(c["sub"]))
        for c in v.get("children", ())
    )
    return SubtreeDescription(int(v["id"]), caps, kids)


def encode_message(msg) -> dict:
    kind = type(msg).__name__
    if isinstance(msg, Heartbeat):
        return {"type": kind}
    if isinstance(msg, MergeAnnounce):
        return {
            "type": kind,
            "sub_root": msg.sub.root,
            "hops": len(msg.via_port_chain),
            "entry_port": msg.entry_port,
            "parent_port": msg.parent_port,
            "chain": [[h.node, h.via_port, h.entry_port, encode_pose(h.pose)] for h in msg.via_port_chain],
            "sub": encode_desc(msg.sub),
            "epochs": [list(e) for e in msg.epochs],
        }
    if isinstance(msg, SplitNotice):
        return {"type": kind, "detached_root": msg.detached_root, "epoch": msg.epoch}
    if isinstance(msg, SensorReport):
        r = msg.reading
        return {"type": kind, "origin": msg.origin, "distance": r.distance, "bearing": r.bearing,
                "sensed_at": r.sensed_at}
    if isinstance(msg, ActuatorCommand):
        c = msg.command
        return {"type": kind, "target": msg.target, "vx": c.vx, "vy": c.vy, "omega": c.omega}
    if isinstance(msg, LedCommand):
        return {"type": kind, "target": msg.target, "mask": msg.led_mask}
    if isinstance(msg, DetachOrder):
        return {"type": kind, "split_at": msg.split_at}
    if isinstance(msg, CedeOrder):
        rem = msg.parent_remainder
        return {
            "type": kind,
            "new_local_root": msg.new_local_root,
            "edge_pose": encode_pose(msg.edge_pose),
            "remainder": None if rem is None else encode_desc(rem),
            "remainder_epochs": [list(e) for e in msg.remainder_epochs],
        }
    raise TypeError(f"cannot encode {msg!r}")


def decode_message(v: dict):
    kind = v["type"]
    if kind == "Heartbeat":
        return Heartbeat()
    if kind == "MergeAnnounce":
        chain = tuple(Hop(int(a), int(b), int(c), decode_pose(p)) for a, b, c, p in v["chain"])
        epochs = tuple((int(n), int(e)) for n, e in v.get("epochs", ()))
        return MergeAnnounce(decode_desc(v["sub"]), chain, int(v["entry_port"]), int(v["parent_port"]), epochs)
    if kind == "SplitNotice":
        return SplitNotice(int(v["detached_root"]), int(v.get("epoch", 0)))
    if kind == "SensorReport":
        return SensorReport(int(v["origin"]), StimulusReading(v["distance"], v["bearing"], v["sensed_at"]))
    if kind == "ActuatorCommand":
        return ActuatorCommand(int(v["target"]), ModuleCommand(v["vx"], v["vy"], v["omega"]))
    if kind == "LedCommand":
        return LedCommand(int(v["target"]), int(v["mask"]))
    if kind == "DetachOrder":
        return DetachOrder(int(v["split_at"]))
    if kind == "CedeOrder":
        rem = v.get("remainder")
        return CedeOrder(int(v["new_local_root"]), None if rem is None else decode_desc(rem),
                         decode_pose(v["edge_pose"]),
                         tuple((int(n), int(e)) for n, e in v.get("remainder_epochs", ())))
    raise ValueError(f"unknown message type {kind!r}")
