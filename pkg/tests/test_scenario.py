import pytest

from vnsim.cli import SHIPPED, shipped_path
from vnsim.scenario import ParseError, ValidationError, load_scenario, parse_scenario, serialize

MINIMAL = """
robots:
  - {id: 0}
"""


def test_minimal_scenario():
    sc = parse_scenario(MINIMAL)
    assert [r.id for r in sc.robots] == [0]
    assert sc.script == [] and sc.templates == {}


def test_empty_document_is_an_empty_scenario():
    assert parse_scenario("").robots == []


def test_fault_scenario_parses():
    sc = load_scenario(shipped_path("fig3"))
    assert [r.id for r in sc.robots] == [0, 1, 2, 3]
    assert len(sc.templates["star4"]) == 4
    (fault,) = sc.script
    assert fault.kind == "InjectFault" and fault.get("node") == 0 and fault.at == 5.0


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios_roundtrip(name):
    sc = load_scenario(shipped_path(name))
    assert parse_scenario(serialize(sc)) == sc
    assert serialize(parse_scenario(serialize(sc))) == serialize(sc)


def test_undefined_template_is_a_validation_error():
    text = MINIMAL + "script:\n  - {at: 1, action: Form, template: nope, recruiter: 0}\n"
    with pytest.raises(ValidationError) as exc:
        parse_scenario(text)
    assert "undefined template 'nope'" in str(exc.value)
    assert exc.value.errors[0].startswith("line 5:")


def test_script_times_must_not_go_back():
    text = MINIMAL + (
        "script:\n"
        "  - {at: 2, action: InjectFault, node: 0}\n"
        "  - {at: 1, action: InjectFault, node: 0}\n"
    )
    with pytest.raises(ValidationError) as exc:
        parse_scenario(text)
    assert exc.value.errors == ["line 6: script times must be nondecreasing (1.0 after 2.0)"]


def test_unknown_robot_reference():
    with pytest.raises(ValidationError, match="unknown robot 7"):
        parse_scenario(MINIMAL + "script:\n  - {at: 1, action: InjectFault, node: 7}\n")


def test_parse_errors_carry_line_numbers():
    text = "robots:\n  - {id: 0}\n  - {id: x}\nscript:\n  - {at: 1, action: Fly}\n"
    with pytest.raises(ParseError) as exc:
        parse_scenario(text)
    msg = str(exc.value)
    assert "line 3: robot id must be a number" in msg
    assert "line 5: unknown action 'Fly'" in msg
    with pytest.raises(ParseError, match="^line 2: mapping values are not allowed"):
        parse_scenario("name: a\n  until: 3\n")


def test_bad_template_is_reported():
    text = MINIMAL + "templates:\n  t:\n    slots: [{}, {parent: 3}]\n"
    with pytest.raises(ParseError, match="parent must precede"):
        parse_scenario(text)


def test_unknown_param_and_duplicate_ids():
    with pytest.raises(ParseError, match="unknown parameter 'warp'"):
        parse_scenario(MINIMAL + "params: {warp: 9}\n")
    with pytest.raises(ValidationError, match="duplicate robot ids"):
        parse_scenario("robots: [{id: 1}, {id: 1}]\n")


def test_env_overrides_params():
    sc = parse_scenario(MINIMAL + "params: {seed: 3, drop_probability: 0.1}\n")
    p = sc.sim_params(env={"VNSIM_PARAM_DROP_PROBABILITY": "0.25", "OTHER": "1"})
    assert p.drop_probability == 0.25 and p.seed == 3
    assert sc.sim_params(seed=11, env={"VNSIM_PARAM_SEED": "4"}).seed == 11
