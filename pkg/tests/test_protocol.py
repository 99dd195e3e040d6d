"""External evaluator protocol against the stub: echo, rejection, faults."""
import json
import sys

import pytest

from theta_dse.design_space import bundled_soc_space, uniform_space
from theta_dse.errors import EvaluatorProcessError
from theta_dse.external import EvaluatorChannel, ExternalEnvironment


def stub_command(tmp_path, config: dict | None = None) -> list[str]:
    cmd = [sys.executable, "-m", "theta_dse.stub_eval"]
    if config is not None:
        path = tmp_path / "stub_config.json"
        path.write_text(json.dumps(config))
        cmd += ["--config", str(path)]
    return cmd


@pytest.fixture
def space():
    return uniform_space("proto", 3, 4)


class TestHappyPath:
    def test_echo_objectives(self, tmp_path, space):
        env = ExternalEnvironment(space, stub_command(tmp_path), timeout_s=10)
        try:
            res = env.evaluate((0, 1, 2))
            assert not res.is_anomaly
            assert res.objectives == {"score": 1.0}
        finally:
            env.close()

    def test_linear_objectives_on_soc_space(self, tmp_path):
        soc = bundled_soc_space()
        config = {
            "objectives": {
                "latency": {"bias": 10.0, "coeffs": {"cpu_type": {"ooo_x86": -4.0}}},
                "area": {"bias": 2.0},
            }
        }
        env = ExternalEnvironment(soc, stub_command(tmp_path, config), timeout_s=10)
        try:
            base = env.evaluate((0,) * 18)
            fast = env.evaluate((1,) + (0,) * 17)
            assert base.objectives == {"latency": 10.0, "area": 2.0}
            assert fast.objectives == {"latency": 6.0, "area": 2.0}
        finally:
            env.close()

    def test_batch_order_preserved_with_workers(self, tmp_path, space):
        config = {"objectives": {"score": {"bias": 0.0, "coeffs": {
            "dim_00": {"c0": 0.0, "c1": 1.0, "c2": 2.0, "c3": 3.0}}}}}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), workers=3, timeout_s=10)
        try:
            designs = [(i % 4, 0, 0) for i in range(9)]
            results = env.evaluate_batch(designs)
            assert [r.objectives["score"] for r in results] == [float(i % 4) for i in range(9)]
        finally:
            env.close()


class TestAnomalies:
    def test_configured_rejection(self, tmp_path, space):
        config = {"reject": [{"dim": "dim_01", "choice": "c2", "reason": "rejected"}]}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), timeout_s=10)
        try:
            ok = env.evaluate((0, 1, 0))
            bad = env.evaluate((0, 2, 0))
            assert not ok.is_anomaly
            assert bad.is_anomaly and bad.anomaly == "rejected"
        finally:
            env.close()

    def test_timeout_becomes_anomaly_then_recovers(self, tmp_path, space):
        config = {"fault": {"kind": "hang", "after": 1}}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), timeout_s=1.5)
        try:
            assert not env.evaluate((0, 0, 0)).is_anomaly
            res = env.evaluate((1, 0, 0))
            assert res.is_anomaly and res.anomaly == "timeout"
            # channel restarted; fresh process serves again
            assert not env.evaluate((2, 0, 0)).is_anomaly
        finally:
            env.close()

    def test_id_mismatch_becomes_protocol_anomaly(self, tmp_path, space):
        config = {"fault": {"kind": "wrong_id", "after": 2}}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), timeout_s=10)
        try:
            assert not env.evaluate((0, 0, 0)).is_anomaly
            assert not env.evaluate((1, 0, 0)).is_anomaly
            res = env.evaluate((2, 0, 0))
            assert res.is_anomaly and res.anomaly == "protocol"
        finally:
            env.close()

    def test_malformed_response_becomes_protocol_anomaly(self, tmp_path, space):
        config = {"fault": {"kind": "malformed", "after": 0}}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), timeout_s=10)
        try:
            res = env.evaluate((0, 0, 0))
            assert res.is_anomaly and res.anomaly == "protocol"
        finally:
            env.close()


class TestProcessDeath:
    def test_crash_raises_run_level_failure(self, tmp_path, space):
        config = {"fault": {"kind": "crash", "after": 1}}
        env = ExternalEnvironment(space, stub_command(tmp_path, config), timeout_s=10)
        try:
            assert not env.evaluate((0, 0, 0)).is_anomaly
            with pytest.raises(EvaluatorProcessError):
                env.evaluate((1, 0, 0))
        finally:
            env.close()

    def test_bad_handshake_raises(self, tmp_path, space):
        config = {"fault": {"kind": "bad_handshake"}}
        with pytest.raises(EvaluatorProcessError):
            EvaluatorChannel(stub_command(tmp_path, config), space, timeout_s=10)

    def test_nonexistent_command_raises(self, space):
        with pytest.raises((EvaluatorProcessError, OSError)):
            EvaluatorChannel(["/nonexistent/evaluator"], space, timeout_s=2)
