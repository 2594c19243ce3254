"""Smoke test for the switchboard extension module: teach a branch, replay,
round-trip the library and evaluate the recorded rollouts."""

import json
import tempfile
from pathlib import Path

import switchboard as sb


def main():
    board_a = sb.Scene.taskboard({"peg": "A", "door": "closed"}, seed=1)
    board_b = sb.Scene.taskboard({"peg": "B", "door": "closed"}, seed=2)
    task = sb.Task.from_demo("peg", board_a.peg_demo(), board_a)
    assert task.parts == [0]

    answer = {"command": {"kind": "demonstrate", "waypoints": board_b.peg_recovery(), "fromCurrent": True}}
    taught = task.run(board_b, commands=[answer])
    assert taught.outcome["status"] == "taught", taught.outcome
    assert len(task.parts) == 3 and len(task.decision_states) == 1
    assert task.validate() == []

    # an unanswered anomaly surfaces as an error
    try:
        sb.Task.from_demo("peg", board_a.peg_demo(), board_a).run(board_b)
    except RuntimeError as e:
        assert "exhausted" in str(e)
    else:
        raise AssertionError("expected a deadlock")

    rollouts = []
    for peg, seed in [("A", 11), ("A", 12), ("B", 13), ("B", 14)]:
        scene = sb.Scene.taskboard({"peg": peg, "door": "closed"}, seed=seed)
        r = task.run(scene, seed=5)
        assert r.outcome["status"] == "done"
        assert r.executed_variant == ([0, 1] if peg == "A" else [0, 1, 2])
        rollouts.append(r)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        task.save(tmp / "lib")
        again = sb.Task.load(tmp / "lib")
        assert again.parts == task.parts and again.edges == task.edges
        rollouts[0].write(tmp / "r.jsonl")
        back = sb.Rollout.read(tmp / "r.jsonl")
        assert back.jsonl() == rollouts[0].jsonl()
        header, frames = sb.swem_info(tmp / "r.swem")
        assert frames == len(back) and header["count"] == frames
        lines = back.jsonl().splitlines()
        assert json.loads(lines[-1])["outcome"]["status"] == "done"

    report = sb.evaluate(task, rollouts, methods=["prototype-mean", "prototype-concat"])
    for summary in report["summaries"]:
        assert summary["decisionAccuracy"] == 1.0, summary
    curve = sb.labelgrowth(2, 3, methods=["mean"]).splitlines()
    assert curve[0].startswith("classes,method,") and len(curve) == 3
    print("switchboard", sb.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
