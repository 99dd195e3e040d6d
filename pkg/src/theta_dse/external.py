"""External evaluator protocol: newline-delimited JSON over a child process.

Engine sends one handshake line, then one request per design; the evaluator
answers each request with a matching-id response. Timeouts, malformed lines,
and id mismatches degrade to per-sample anomalies; a dead process is a
run-level failure.
"""
from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .design_space import DesignSpace
from .envs import Environment, EvalResult
from .errors import ConfigurationError, EvaluatorProcessError

PROTOCOL_NAME = "theta-dse-eval"
PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 300.0

_EOF = object()


class EvaluatorChannel:
    """One evaluator process; single request in flight at a time."""

    def __init__(self, command: Sequence[str], space: DesignSpace,
                 timeout_s: float = DEFAULT_TIMEOUT_S):
        self.command = list(command)
        self.space = space
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0
        self._spawn()

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=sys.stderr,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        reader = threading.Thread(target=self._read_loop, args=(self._proc, self._lines), daemon=True)
        reader.start()
        self._handshake()

    @staticmethod
    def _read_loop(proc: subprocess.Popen, out: queue.Queue) -> None:
        for line in proc.stdout:
            out.put(line)
        out.put(_EOF)

    def _send(self, payload: dict) -> None:
        assert self._proc is not None
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise EvaluatorProcessError(f"evaluator process closed its stdin: {e}") from None

    def _read_line(self, timeout_s: float) -> str | None:
        """One line, or None on timeout; raises if the process died."""
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            return None
        if line is _EOF:
            raise EvaluatorProcessError(
                f"evaluator process exited (code {self._proc.poll()})"
            )
        return line

    def _handshake(self) -> None:
        self._send({
            "protocol": PROTOCOL_NAME,
            "version": PROTOCOL_VERSION,
            "space_hash": self.space.content_hash(),
        })
        line = self._read_line(self.timeout_s)
        if line is None:
            raise EvaluatorProcessError("evaluator did not answer the handshake in time")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise EvaluatorProcessError(f"bad handshake reply: {line!r}") from None
        if reply.get("ok") is not True:
            raise EvaluatorProcessError(f"evaluator refused the handshake: {reply!r}")

    def _restart(self) -> None:
        self.close()
        self._spawn()

    def evaluate(self, design: Sequence[int]) -> EvalResult:
        request_id = self._next_id
        self._next_id += 1
        self._send({"id": request_id, "design": self.space.point_to_wire(design)})
        line = self._read_line(self.timeout_s)
        if line is None:
            # the stream may now hold a stale response; start clean
            self._restart()
            return EvalResult.rejected("timeout")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self._restart()
            return EvalResult.rejected("protocol")
        if not isinstance(reply, dict) or reply.get("id") != request_id:
            self._restart()
            return EvalResult.rejected("protocol")
        if "error" in reply:
            return EvalResult.rejected(str(reply["error"]))
        objectives = reply.get("objectives")
        if not isinstance(objectives, dict) or not objectives:
            return EvalResult.rejected("protocol")
        clean: dict[str, float] = {}
        for name, value in objectives.items():
            if not isinstance(value, (int, float)) or not np.isfinite(value):
                return EvalResult.rejected("non-finite objective")
            clean[str(name)] = float(value)
        return EvalResult.success(clean)

    def close(self) -> None:
        if self._proc is None:
            return
        proc, self._proc = self._proc, None
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class ExternalEnvironment(Environment):
    """Pool of evaluator processes behind the Environment contract.

    Each worker owns one channel; batch results are reassembled in sample
    order, so concurrency never changes what the engine sees.
    """

    def __init__(self, space: DesignSpace, command: Sequence[str], workers: int = 1,
                 timeout_s: float = DEFAULT_TIMEOUT_S):
        if workers < 1:
            raise ConfigurationError("eval workers must be >= 1")
        self.space = space
        self.command = list(command)
        self.workers = workers
        self.timeout_s = timeout_s
        self._channels: list[EvaluatorChannel] = []

    def _channel(self, i: int) -> EvaluatorChannel:
        while len(self._channels) <= i:
            self._channels.append(
                EvaluatorChannel(self.command, self.space, timeout_s=self.timeout_s)
            )
        return self._channels[i]

    def evaluate(self, design: Sequence[int]) -> EvalResult:
        return self._channel(0).evaluate(design)

    def evaluate_batch(self, designs: Sequence[Sequence[int]]) -> list[EvalResult]:
        if self.workers == 1 or len(designs) == 1:
            return [self.evaluate(d) for d in designs]
        n = min(self.workers, len(designs))
        channels = [self._channel(i) for i in range(n)]

        def run_lane(lane: int) -> list[tuple[int, EvalResult]]:
            out = []
            for j in range(lane, len(designs), n):
                out.append((j, channels[lane].evaluate(designs[j])))
            return out

        results: list[EvalResult | None] = [None] * len(designs)
        with ThreadPoolExecutor(max_workers=n) as pool:
            for lane_results in pool.map(run_lane, range(n)):
                for j, res in lane_results:
                    results[j] = res
        return results  # type: ignore[return-value]

    def close(self) -> None:
        for ch in self._channels:
            ch.close()
        self._channels = []
