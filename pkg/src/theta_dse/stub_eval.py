"""Reference stub evaluator speaking the theta-dse-eval protocol.

Serves as the protocol's executable documentation and as the test double for
simulator wrappers: objectives are configurable linear functions of choice
labels, rejection predicates mark designs anomalous, and a fault block can
inject protocol violations for robustness tests.

Run as ``python -m theta_dse.stub_eval [--config cfg.json]``. Config schema:

    {
      "objectives": {"score": {"bias": 1.0,
                               "coeffs": {"cpu_type": {"ooo_x86": 0.5}}}},
      "reject": [{"dim": "cpu_type", "choice": "inorder_x86",
                  "reason": "rejected"}],
      "delay_s": 0.0,
      "fault": {"kind": "wrong_id", "after": 3}
    }

Fault kinds: wrong_id, malformed, hang, crash, bad_handshake.
"""
from __future__ import annotations

import argparse
import json
import sys
import time


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _objectives_for(design: dict, config: dict) -> dict[str, float]:
    spec = config.get("objectives") or {"score": {"bias": 1.0, "coeffs": {}}}
    out = {}
    for name, rule in spec.items():
        value = float(rule.get("bias", 0.0))
        for dim, table in rule.get("coeffs", {}).items():
            choice = design.get(dim)
            if choice is not None and choice in table:
                value += float(table[choice])
        out[name] = value
    return out


def _rejection_reason(design: dict, config: dict) -> str | None:
    for rule in config.get("reject", []):
        if design.get(rule["dim"]) == rule["choice"]:
            return rule.get("reason", "rejected")
    return None


def _reply(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")
    sys.stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="theta-dse-stub-eval")
    parser.add_argument("--config", default=None, help="JSON behavior config")
    args = parser.parse_args(argv)
    config = _load_config(args.config)
    fault = config.get("fault") or {}
    fault_kind = fault.get("kind")
    fault_after = int(fault.get("after", 0))

    handshake = sys.stdin.readline()
    if not handshake:
        return 1
    if fault_kind == "bad_handshake":
        _reply({"ok": False, "reason": "configured refusal"})
        return 1
    _reply({"ok": True})

    served = 0
    for line in sys.stdin:
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            _reply({"id": None, "error": "unparseable request"})
            continue
        request_id = request.get("id")
        design = request.get("design", {})
        delay = float(config.get("delay_s", 0.0))
        if delay > 0:
            time.sleep(delay)
        if fault_kind and served >= fault_after:
            if fault_kind == "wrong_id":
                _reply({"id": (request_id or 0) + 1000, "objectives": {"score": 0.0}})
                served += 1
                continue
            if fault_kind == "malformed":
                sys.stdout.write("this is not json\n")
                sys.stdout.flush()
                served += 1
                continue
            if fault_kind == "hang":
                time.sleep(3600.0)
            if fault_kind == "crash":
                return 13
        reason = _rejection_reason(design, config)
        if reason is not None:
            _reply({"id": request_id, "error": reason})
        else:
            _reply({"id": request_id, "objectives": _objectives_for(design, config)})
        served += 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
