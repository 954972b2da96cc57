import numpy as np
import pytest

from armteleop.config import ConfigError
from armteleop.geometry import Pose
from armteleop.protocol import Button, Gripper, WaypointMsg
from armteleop.scripting import (
    ReplayScript,
    ScriptRow,
    generate_cycle_script,
    parse_script,
    write_script,
    write_waypoint_trace,
)

from .test_server import default_cfg


class TestScriptFormat:
    def test_round_trip(self, tmp_path):
        script = ReplayScript(
            rows=[
                ScriptRow(0, Pose(), True),
                ScriptRow(50_000, Pose.from_translation(0.1, 0, 0), True, Gripper.CLOSE, Button.START_TEST),
                ScriptRow(100_000, Pose(), False),
            ],
            expects=[(60_000, "pick")],
        )
        path = tmp_path / "s.csv"
        write_script(str(path), script)
        back = parse_script(str(path))
        assert len(back.rows) == 3
        assert back.rows[1].gripper is Gripper.CLOSE
        assert back.rows[1].buttons is Button.START_TEST
        assert not back.rows[2].clutch
        assert back.expects == [(60_000, "pick")]
        assert np.allclose(back.rows[1].pose.position, [0.1, 0, 0])

    def test_non_decreasing_timestamps_enforced(self):
        with pytest.raises(ConfigError):
            ReplayScript(rows=[ScriptRow(100, Pose(), True), ScriptRow(50, Pose(), True)])

    def test_malformed_rows_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("wp,0,1,2\n")
        with pytest.raises(ConfigError):
            parse_script(str(bad))
        bad.write_text("teleport,0,x\n")
        with pytest.raises(ConfigError):
            parse_script(str(bad))

    def test_empty_script_ok(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# nothing\n")
        script = parse_script(str(path))
        assert script.rows == [] and script.expects == []

    def test_trace_writer_matches_script_reader(self, tmp_path):
        wps = [
            WaypointMsg(seq=1, send_time=0, pose=Pose(), clutch=True),
            WaypointMsg(seq=2, send_time=1, pose=Pose.from_translation(0, 0.2, 0), clutch=True, gripper=Gripper.OPEN),
        ]
        path = tmp_path / "trace.csv"
        write_waypoint_trace(str(path), [10, 20], wps)
        back = parse_script(str(path))
        assert [r.t_us for r in back.rows] == [10, 20]
        assert back.rows[1].gripper is Gripper.OPEN


class TestGenerator:
    def test_expected_event_order(self):
        cfg = default_cfg()
        script = generate_cycle_script(cfg, cycles=2)
        assert script.expected_events() == ["pick", "place", "test_complete", "returned"] * 2

    def test_engage_release_counts(self):
        cfg = default_cfg()
        script = generate_cycle_script(cfg, cycles=10)
        engages = sum(
            1
            for prev, cur in zip(script.rows, script.rows[1:])
            if cur.clutch and not prev.clutch
        ) + (1 if script.rows[0].clutch else 0)
        releases = sum(1 for r in script.rows if not r.clutch)
        assert engages == 20  # two engagements per cycle
        assert releases == 20

    def test_waypoints_start_at_zero_delta(self):
        cfg = default_cfg()
        script = generate_cycle_script(cfg, cycles=1)
        assert np.allclose(script.rows[0].pose.position, 0.0, atol=1e-12)

    def test_custom_rate_and_period(self):
        cfg = default_cfg()
        script = generate_cycle_script(cfg, cycles=1, period_s=68.0, rate_hz=10.0)
        dts = np.diff([r.t_us for r in script.rows])
        assert dts.min() >= 0
        assert script.duration_us <= 68.5e6

    def test_requires_zones(self):
        cfg = default_cfg()
        cfg.zones.pop("tester")
        with pytest.raises(ConfigError):
            generate_cycle_script(cfg, cycles=1)
