import pytest

from vnsim.cli import main


@pytest.fixture(scope="module")
def fig3_trace(tmp_path_factory):
    path = tmp_path_factory.mktemp("fig3") / "trace.jsonl"
    assert main(["run", "--scenario", "fig3", "--seed", "1", "--trace-out", str(path)]) == 0
    return path


def test_run_fault_scenario_trace(fig3_trace):
    kinds = [line.split('"kind":"')[1].split('"')[0] for line in fig3_trace.read_text().splitlines()]
    assert kinds.count("FaultInjected") == 1
    assert kinds.count("FaultDetected") == 3
    assert fig3_trace.read_text().count('"kind":"RoleChange","to":"Brain"') >= 3
    assert kinds[-1] != "CheckFail" and "CheckFail" not in kinds
    assert "CheckPass" in kinds


def test_run_is_byte_deterministic(fig3_trace, tmp_path):
    again = tmp_path / "again.jsonl"
    assert main(["run", "--scenario", "fig3", "--seed", "1", "--trace-out", str(again)]) == 0
    assert again.read_bytes() == fig3_trace.read_bytes()


def test_check_and_replay(fig3_trace, tmp_path, capsys):
    assert main(["check", "--trace", str(fig3_trace)]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["replay", "--trace", str(fig3_trace), "--out", str(tmp_path / "svg"), "--every", "10"]) == 0
    assert len(list((tmp_path / "svg").glob("frame_*.svg"))) == 8


def test_check_fails_on_corrupted_trace(fig3_trace, tmp_path):
    lines = fig3_trace.read_text().splitlines()
    bad = tmp_path / "bad.jsonl"
    lines.append(lines[-1].split('"kind"')[0] + '"kind":"CheckFail","check":"injected","problems":[]}')
    bad.write_text("\n".join(lines) + "\n")
    assert main(["check", "--trace", str(bad)]) == 1


def test_unknown_file_exits_nonzero(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml"), "--trace-out", str(tmp_path / "t")]) == 2
    assert main(["check", "--trace", str(tmp_path / "missing.jsonl")]) == 2
    assert "error:" in capsys.readouterr().err


def test_invalid_scenario_exits_2(tmp_path, capsys):
    f = tmp_path / "bad.yaml"
    f.write_text("robots: [{id: 0}]\nscript:\n  - {at: 1, action: InjectFault, node: 4}\n")
    assert main(["run", "--scenario", str(f), "--trace-out", str(tmp_path / "t")]) == 2
    assert "line 3" in capsys.readouterr().err
