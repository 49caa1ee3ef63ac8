import json
import math

import numpy as np
import pytest

from ferryplan.cli import main
from ferryplan.scenarios import Scenario, crossing_scenario, hover_scenario, straight_corridor
from ferryplan.envfield import EnvModel
from ferryplan.model import State


@pytest.fixture
def hover_file(tmp_path):
    path = tmp_path / "hover.json"
    path.write_text(json.dumps(hover_scenario().to_dict()))
    return str(path)


@pytest.fixture
def hop_file(tmp_path):
    scenario = Scenario(
        id="hop",
        params=crossing_scenario().params,
        corridor=straight_corridor(length=600.0),
        env=EnvModel.still(),
        docks=(State(0.0, 0.0, math.pi / 2, 0, 0, 0),
               State(0.0, 600.0, math.pi / 2, 0, 0, 0)),
        departure=0.0,
        arrival=300.0,
        N_nodes=16,
    )
    path = tmp_path / "hop.json"
    path.write_text(json.dumps(scenario.to_dict()))
    return str(path)


def env_csv(tmp_path, n=25, seed=0):
    rng = np.random.default_rng(seed)
    rows = ["x_l,y_l,vx_wind,vy_wind,vx_current,vy_current"]
    for _ in range(n):
        x, y = rng.uniform(-200, 200), rng.uniform(0, 2000)
        rows.append(f"{x},{y},{2 + 0.001 * x},{-5 + 0.002 * y},0.05,0.01")
    path = tmp_path / "env.csv"
    path.write_text("\n".join(rows) + "\n")
    return str(path)


class TestFitEnv:
    def test_writes_model(self, tmp_path):
        csv = env_csv(tmp_path)
        out = tmp_path / "model.json"
        assert main(["fit-env", csv, "-o", str(out), "--stats"]) == 0
        model = json.loads(out.read_text())
        assert "wind" in model and "current" in model
        assert model["stats"]["sample_count"] == 25
        assert model["stats"]["wind"]["rmse"] <= 1e-8

    def test_empty_csv_fails(self, tmp_path, capsys):
        path = tmp_path / "empty.csv"
        path.write_text("x_l,y_l,vx_wind,vy_wind,vx_current,vy_current\n")
        assert main(["fit-env", str(path), "-o", str(tmp_path / "m.json")]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InsufficientDataError"

    def test_byte_stable(self, tmp_path):
        csv = env_csv(tmp_path)
        out1, out2 = tmp_path / "m1.json", tmp_path / "m2.json"
        main(["fit-env", csv, "-o", str(out1)])
        main(["fit-env", csv, "-o", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()


class TestIdentify:
    def test_round_trip(self, tmp_path):
        lines = ["surge_speed,thrust_total,power_total"]
        for v in (0.5, 1.0, 1.5, 2.0, 2.5):
            thrust = 1470.0 * v + 753.0 * v * v
            power = 2 * 0.0417 * (thrust**2 / 4.0) ** 0.75
            lines.append(f"{v},{thrust},{power}")
        csv = tmp_path / "telemetry.csv"
        csv.write_text("\n".join(lines) + "\n")
        out = tmp_path / "params.json"
        assert main(["identify", str(csv), "-o", str(out)]) == 0
        params = json.loads(out.read_text())
        assert params["X_u"] == pytest.approx(1470.0, abs=1e-8)
        assert params["X_uu"] == pytest.approx(753.0, abs=1e-8)
        assert params["c_p_check"] == pytest.approx(0.0417, abs=1e-12)


class TestPlan:
    def test_hover_plan(self, tmp_path, hover_file):
        out = tmp_path / "plan.json"
        assert main(["plan", hover_file, "-o", str(out)]) == 0
        plan = json.loads(out.read_text())
        assert plan["total_energy"] <= 1.0
        assert plan["diagnostics"]["status"] == "converged"

    def test_transit_plan(self, tmp_path, hop_file):
        out = tmp_path / "plan.json"
        assert main(["plan", hop_file, "-o", str(out)]) == 0
        plan = json.loads(out.read_text())
        assert plan["total_energy"] > 0
        assert len(plan["times"]) == 17

    def test_missing_file(self, tmp_path, capsys):
        assert main(["plan", str(tmp_path / "nope.json"), "-o", "-"]) == 1
        assert "error" in capsys.readouterr().err


class TestSimulate:
    def write_updates(self, tmp_path, hop_file, offsets):
        plan_out = tmp_path / "p.json"
        main(["plan", hop_file, "-o", str(plan_out)])
        plan = json.loads(plan_out.read_text())
        times = plan["times"]
        states = np.asarray(plan["states"])
        updates = []
        for k, (frac, dx) in enumerate(offsets):
            t = times[0] + frac * (times[-1] - times[0])
            state = np.array([np.interp(t, times, states[:, j]) for j in range(6)])
            state[0] += dx
            updates.append({"t": t, "state": state.tolist()})
        path = tmp_path / "updates.json"
        path.write_text(json.dumps(updates))
        return str(path)

    def test_replay_is_byte_identical(self, tmp_path, hop_file):
        updates = self.write_updates(tmp_path, hop_file,
                                     [(0.2, 10.0), (0.4, -15.0), (0.6, 5.0)])
        out1, out2 = tmp_path / "h1.json", tmp_path / "h2.json"
        assert main(["simulate", hop_file, "--updates", updates, "-o", str(out1)]) == 0
        assert main(["simulate", hop_file, "--updates", updates, "-o", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        history = json.loads(out1.read_text())
        assert len(history["plans"]) == 4  # initial plan + 3 replans


class TestPareto:
    def test_grid_csv(self, tmp_path, hop_file):
        out = tmp_path / "pareto.csv"
        code = main(["pareto", hop_file, "--durations", "300,240,180",
                     "--scalings", "0,1", "-o", str(out)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 7  # header + 6 rows
        assert lines[0] == "duration_s,scaling,total_energy_J,status,iterations"


class TestUsage:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["plan", "--bogus"])
        assert exc.value.code == 2

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "fit-env" in capsys.readouterr().out
