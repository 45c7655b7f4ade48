"""Four-worker execution of a worker-annotated plan with explicit message passing.

Workers are threads that own their tensors outright. When a step needs an
operand produced on another worker, the producer serializes it and pushes the
bytes onto the consumer's inbox right after computing it; the consumer blocks
until it arrives. Input tensors are scattered to the worker that first
consumes them unless the plan assigns them a home worker, in which case they
start there and move like any other tensor.
"""

from __future__ import annotations

import json
import queue
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .plan import ClosedNetwork, CostReport, Plan, PlanError, contract_step, estimate_cost
from .tensor import Tensor, default_mem_ceiling

N_WORKERS = 4
_MAGIC = b"TNSR"


class SerializationError(ValueError):
    pass


class ParallelExecutionError(RuntimeError):
    def __init__(self, step: int | None, worker: int, cause: BaseException):
        self.step = step
        self.worker = worker
        self.cause = cause
        super().__init__(f"worker {worker} failed at step {step}: {cause!r}")


def _to_json_label(lab):
    if isinstance(lab, tuple):
        return [_to_json_label(x) for x in lab]
    if isinstance(lab, (str, int)) and not isinstance(lab, bool):
        return lab
    raise SerializationError(f"label {lab!r} is not serializable")


def _from_json_label(lab):
    if isinstance(lab, list):
        return tuple(_from_json_label(x) for x in lab)
    return lab


def serialize_tensor(t: Tensor) -> bytes:
    """``TNSR`` + u32 header length + JSON header + little-endian float64 data."""
    header = json.dumps(
        {"labels": [_to_json_label(lab) for lab in t.labels], "dims": list(t.shape), "size": t.size},
        separators=(",", ":"),
    ).encode()
    return _MAGIC + struct.pack("<I", len(header)) + header + np.ascontiguousarray(t.data, dtype="<f8").tobytes()


def deserialize_tensor(buf: bytes) -> Tensor:
    if len(buf) < 8 or buf[:4] != _MAGIC:
        raise SerializationError("buffer is not a serialized tensor")
    (hlen,) = struct.unpack("<I", buf[4:8])
    if len(buf) < 8 + hlen:
        raise SerializationError("truncated header")
    try:
        header = json.loads(buf[8 : 8 + hlen])
        labels = [_from_json_label(lab) for lab in header["labels"]]
        dims = [int(d) for d in header["dims"]]
        size = int(header["size"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SerializationError(f"malformed header: {exc}") from exc
    if len(labels) != len(dims) or size != int(np.prod(dims, dtype=np.int64)):
        raise SerializationError("header dims and size disagree")
    body = buf[8 + hlen :]
    if len(body) != 8 * size:
        raise SerializationError(f"expected {8 * size} data bytes, got {len(body)}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(dims)
    return Tensor(labels, data)


@dataclass
class WorkerMsg:
    step: int  # step that consumes the tensor
    tensor_id: int
    payload: bytes
    src: int
    dst: int


@dataclass
class MessageStats:
    messages_sent: int = 0
    bytes_sent: int = 0
    comm_seconds: float = 0.0
    local_seconds: float = 0.0
    merge_seconds: float = 0.0
    peak_elements: int = 0
    per_worker_messages: list[int] = field(default_factory=lambda: [0] * N_WORKERS)
    per_worker_bytes: list[int] = field(default_factory=lambda: [0] * N_WORKERS)
    per_worker_received: list[int] = field(default_factory=lambda: [0] * N_WORKERS)
    per_worker_comm_seconds: list[float] = field(default_factory=lambda: [0.0] * N_WORKERS)
    per_worker_local_seconds: list[float] = field(default_factory=lambda: [0.0] * N_WORKERS)

    def to_json(self) -> dict:
        return {
            "messages_sent": self.messages_sent,
            "bytes_sent": self.bytes_sent,
            "comm_seconds": self.comm_seconds,
            "local_seconds": self.local_seconds,
            "merge_seconds": self.merge_seconds,
            "peak_elements": self.peak_elements,
            "messages_sent_per_worker": self.per_worker_messages,
            "bytes_sent_per_worker": self.per_worker_bytes,
            "messages_received_per_worker": self.per_worker_received,
            "comm_seconds_per_worker": self.per_worker_comm_seconds,
            "local_seconds_per_worker": self.per_worker_local_seconds,
        }


_ABORT = object()


class _Worker(threading.Thread):
    def __init__(self, wid: int, engine: "_Engine"):
        super().__init__(name=f"tn-worker-{wid}", daemon=True)
        self.wid = wid
        self.engine = engine
        self.inbox: queue.Queue = queue.Queue()
        self.owned: dict[int, Tensor] = {}
        self.arrived: dict[int, Tensor] = {}
        self.sizes: list[int] = []
        self.current_step: int | None = None
        self.messages = 0
        self.received = 0
        self.bytes = 0
        self.comm = 0.0
        self.local = 0.0
        self.merge = 0.0

    def receive(self, tid: int) -> Tensor:
        t0 = time.perf_counter()
        while tid not in self.arrived:
            msg = self.inbox.get()
            if msg is _ABORT:
                raise RuntimeError("aborted by driver")
            self.arrived[msg.tensor_id] = deserialize_tensor(msg.payload)
            self.received += 1
        self.comm += time.perf_counter() - t0
        return self.arrived.pop(tid)

    def send(self, tid: int, t: Tensor, dst: int, step: int) -> None:
        t0 = time.perf_counter()
        payload = serialize_tensor(t)
        self.engine.workers[dst].inbox.put(WorkerMsg(step, tid, payload, self.wid, dst))
        self.messages += 1
        self.bytes += len(payload)
        self.comm += time.perf_counter() - t0

    def run(self) -> None:
        eng = self.engine
        try:
            for tid in eng.pending_inputs[self.wid]:
                self.current_step = eng.consumer_step[tid]
                self.send(tid, self.owned.pop(tid), eng.consumer_worker[tid], eng.consumer_step[tid])
            for k in eng.my_steps[self.wid]:
                self.current_step = k
                s = eng.plan.steps[k]
                remote = False
                ops = []
                for x in (s.a, s.b):
                    if x in self.owned:
                        ops.append(self.owned.pop(x))
                    else:
                        ops.append(self.receive(x))
                        remote = True
                t0 = time.perf_counter()
                out = contract_step(ops[0], ops[1], k, eng.max_elements)
                dt = time.perf_counter() - t0
                if remote:
                    self.merge += dt
                else:
                    self.local += dt
                self.sizes.append(out.size)
                dst = eng.consumer_worker.get(s.out)
                if dst is None:
                    eng.result = out
                elif dst != self.wid:
                    self.send(s.out, out, dst, eng.consumer_step[s.out])
                else:
                    self.owned[s.out] = out
        except BaseException as exc:  # surfaced by the driver
            eng.fail(self.wid, self.current_step, exc)


class _Engine:
    def __init__(self, net: ClosedNetwork, plan: Plan, max_elements: int):
        self.plan = plan
        self.max_elements = max_elements
        self.result: Tensor | None = None
        self.errors: list[ParallelExecutionError] = []
        self._lock = threading.Lock()
        self.consumer_worker: dict[int, int] = {}
        self.consumer_step: dict[int, int] = {}
        self.my_steps: dict[int, list[int]] = {w: [] for w in range(N_WORKERS)}
        for k, s in enumerate(plan.steps):
            if not 0 <= s.worker < N_WORKERS:
                raise PlanError(f"step {k} assigned to worker {s.worker}; expected 0..{N_WORKERS - 1}")
            self.my_steps[s.worker].append(k)
            for x in (s.a, s.b):
                self.consumer_worker[x] = s.worker
                self.consumer_step[x] = k
        self.workers = [_Worker(w, self) for w in range(N_WORKERS)]
        self.pending_inputs: dict[int, list[int]] = {w: [] for w in range(N_WORKERS)}
        for tid, t in enumerate(net.tensors()):
            consumer = self.consumer_worker.get(tid, 0)
            home = plan.home_worker(tid)
            home = consumer if home is None else home
            self.workers[home].owned[tid] = t
            if home != consumer:
                self.pending_inputs[home].append(tid)

    def fail(self, wid: int, step: int | None, exc: BaseException) -> None:
        with self._lock:
            self.errors.append(ParallelExecutionError(step, wid, exc))
        for w in self.workers:
            w.inbox.put(_ABORT)


def execute_plan_parallel(
    net: ClosedNetwork, plan: Plan, max_elements: int | None = None
) -> tuple[float, MessageStats, CostReport]:
    if max_elements is None:
        max_elements = default_mem_ceiling()
    tensors = net.tensors()
    if len(tensors) != plan.n_inputs:
        raise PlanError(f"plan expects {plan.n_inputs} inputs, network has {len(tensors)}")
    if plan.n_inputs == 1:
        t = tensors[0]
        return t.scalar(), MessageStats(peak_elements=t.size), CostReport(t.size, 0, None, [])

    eng = _Engine(net, plan, max_elements)
    for w in eng.workers:
        w.start()
    for w in eng.workers:
        w.join()
    if eng.errors:
        # the first failure is the root cause; the rest are abort echoes
        real = [e for e in eng.errors if not (isinstance(e.cause, RuntimeError) and str(e.cause) == "aborted by driver")]
        err = (real or eng.errors)[0]
        raise err from err.cause

    stats = MessageStats()
    step_sizes: dict[int, int] = {}
    for w in eng.workers:
        for k, n in zip(eng.my_steps[w.wid], w.sizes):
            step_sizes[k] = n
        stats.per_worker_messages[w.wid] = w.messages
        stats.per_worker_bytes[w.wid] = w.bytes
        stats.per_worker_received[w.wid] = w.received
        stats.per_worker_comm_seconds[w.wid] = w.comm
        stats.per_worker_local_seconds[w.wid] = w.local
        stats.merge_seconds += w.merge
    stats.messages_sent = sum(stats.per_worker_messages)
    stats.bytes_sent = sum(stats.per_worker_bytes)
    stats.comm_seconds = sum(stats.per_worker_comm_seconds)
    stats.local_seconds = sum(stats.per_worker_local_seconds)

    sizes = [step_sizes[k] for k in range(len(plan.steps))]
    peak = max(t.size for t in tensors)
    bottleneck = None
    for k, n in enumerate(sizes):
        if n > peak:
            peak, bottleneck = n, k
    stats.peak_elements = peak
    flops = estimate_cost(net, plan).total_flops
    return eng.result.scalar(), stats, CostReport(peak, flops, bottleneck, sizes)


def count_cross_worker_steps(plan: Plan) -> int:
    """Messages a plan will generate: one per operand produced on a different worker."""
    where: dict[int, int] = {} if plan.home is None else dict(enumerate(plan.home))
    n = 0
    for s in plan.steps:
        n += sum(1 for x in (s.a, s.b) if where.get(x, s.worker) != s.worker)
        where[s.out] = s.worker
    return n
