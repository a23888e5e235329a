"""Multi-node detection simulation over a shared capture store.

A replay assigns flow records to named nodes and appends them to an
append-only log, one totally-ordered stream per node. Each node then
independently preprocesses and classifies exactly its own partition,
interval by interval, against one shared normal profile; a coordinator sums
the per-node confusion counts. Nodes never exchange verdicts: sharing stops
at the capture/logging layer, so partitioning can never change outcomes.

Two transports move a node's partition to its worker: direct in-process
hand-off, and a loopback TCP protocol with length-prefixed JSON frames
(4-byte big-endian length, then the UTF-8 payload), one long-lived
connection per node. Both feed the same record-local classification path,
so their reports are identical byte for byte.

Failure model: crash-stop per node. A node that keeps failing past the
retry budget is excluded; the aggregate then covers the healthy nodes only
and is flagged partial.
"""

from __future__ import annotations

import hashlib
import json
import socket
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .decision import DetectionConfig, NormalProfile, classify_scores, ensure_bound
from .evaluation import ConfusionCounts, MetricsReport, confusion, metrics
from .ingest import FeatureSchema, FlowRecord
from .preprocess import PreprocessModel

SIMCONFIG_FORMAT_VERSION = 1

ASSIGNMENT_RULES = ("round-robin", "hash-of-source", "explicit")
TRANSPORTS = ("in-process", "loopback-socket")

_MAX_FRAME = 64 * 1024 * 1024
_SOCKET_TIMEOUT = 30.0


class SimulationError(Exception):
    pass


class TransportError(SimulationError):
    pass


class SimulatedNodeFailure(SimulationError):
    """Raised inside a worker whose node is configured to crash."""


@dataclass(frozen=True)
class CaptureMessage:
    """One logged observation: node, per-node sequence, batching interval,
    and the raw record payload."""

    node: str
    seq: int
    interval_id: int
    values: tuple[str, ...]
    truth: int | None
    origin: tuple[str, int]

    def to_wire(self) -> dict:
        return {
            "type": "capture",
            "node": self.node,
            "seq": self.seq,
            "interval_id": self.interval_id,
            "values": list(self.values),
            "truth": self.truth,
            "origin": [self.origin[0], self.origin[1]],
        }

    @staticmethod
    def from_wire(doc: dict) -> "CaptureMessage":
        return CaptureMessage(
            node=doc["node"],
            seq=doc["seq"],
            interval_id=doc["interval_id"],
            values=tuple(doc["values"]),
            truth=doc["truth"],
            origin=(doc["origin"][0], doc["origin"][1]),
        )

    def record(self) -> FlowRecord:
        return FlowRecord(self.values, self.truth, self.origin)


class SharedStore:
    """Append-only capture log with one totally-ordered stream per node.

    Messages are immutable and never deleted; readers track progress with a
    per-node cursor that can be reset and replayed for audits.
    """

    def __init__(self):
        self._streams: dict[str, list[CaptureMessage]] = {}
        self._cursors: dict[str, int] = {}

    def append(self, msg: CaptureMessage) -> None:
        stream = self._streams.setdefault(msg.node, [])
        last = stream[-1].seq if stream else 0
        if msg.seq <= last:
            raise SimulationError(
                f"node {msg.node!r}: seq {msg.seq} does not increase past {last}"
            )
        stream.append(msg)
        self._cursors.setdefault(msg.node, 0)

    def nodes(self) -> tuple[str, ...]:
        return tuple(self._streams)

    def partition(self, node: str) -> tuple[CaptureMessage, ...]:
        """Full cursor-independent view of one node's stream."""
        return tuple(self._streams.get(node, ()))

    def read_next(self, node: str) -> CaptureMessage | None:
        stream = self._streams.get(node, [])
        pos = self._cursors.get(node, 0)
        if pos >= len(stream):
            return None
        self._cursors[node] = pos + 1
        return stream[pos]

    def drain(self, node: str) -> tuple[CaptureMessage, ...]:
        out = []
        while (msg := self.read_next(node)) is not None:
            out.append(msg)
        return tuple(out)

    def reset_cursor(self, node: str) -> None:
        self._cursors[node] = 0

    def __len__(self) -> int:
        return sum(len(s) for s in self._streams.values())


@dataclass(frozen=True)
class SimulationConfig:
    nodes: tuple[str, ...]
    assignment: str = "round-robin"
    interval_size: int = 100
    w: float = 1.5
    node_w: Mapping[str, float] | None = None  # per-node overrides
    transport: str = "in-process"
    hash_column: str = "srcip"
    explicit_assignment: tuple[str, ...] | None = None
    fail_nodes: tuple[str, ...] = ()
    retry_budget: int = 3
    port: int = 0  # loopback port; 0 picks an ephemeral port
    allow_any_w: bool = False

    def __post_init__(self):
        if not self.nodes:
            raise SimulationError("topology must have at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise SimulationError("node names must be unique")
        if self.assignment not in ASSIGNMENT_RULES:
            raise SimulationError(f"unknown assignment rule {self.assignment!r}")
        if self.transport not in TRANSPORTS:
            raise SimulationError(f"unknown transport {self.transport!r}")
        if self.interval_size < 1:
            raise SimulationError("interval_size must be >= 1")
        if self.retry_budget < 0:
            raise SimulationError("retry_budget must be >= 0")
        unknown = set(self.fail_nodes) - set(self.nodes)
        if unknown:
            raise SimulationError(f"fail_nodes not in topology: {sorted(unknown)}")
        for node, w in ((None, self.w), *(self.node_w or {}).items()):
            if node is not None and node not in self.nodes:
                raise SimulationError(f"node_w names unknown node {node!r}")
            DetectionConfig(w, enforce_range=not self.allow_any_w)

    def w_for(self, node: str) -> DetectionConfig:
        w = (self.node_w or {}).get(node, self.w)
        return DetectionConfig(w, enforce_range=not self.allow_any_w)


def simconfig_to_doc(cfg: SimulationConfig) -> dict:
    return {
        "version": SIMCONFIG_FORMAT_VERSION,
        "nodes": list(cfg.nodes),
        "assignment": cfg.assignment,
        "interval_size": cfg.interval_size,
        "w": cfg.w,
        "node_w": dict(cfg.node_w) if cfg.node_w else None,
        "transport": cfg.transport,
        "hash_column": cfg.hash_column,
        "explicit_assignment": list(cfg.explicit_assignment) if cfg.explicit_assignment else None,
        "fail_nodes": list(cfg.fail_nodes),
        "retry_budget": cfg.retry_budget,
        "port": cfg.port,
        "allow_any_w": cfg.allow_any_w,
    }


def simconfig_from_doc(doc: dict) -> SimulationConfig:
    if doc.get("version") != SIMCONFIG_FORMAT_VERSION:
        raise SimulationError(f"unsupported simulation config version: {doc.get('version')!r}")
    return SimulationConfig(
        nodes=tuple(doc["nodes"]),
        assignment=doc.get("assignment", "round-robin"),
        interval_size=doc.get("interval_size", 100),
        w=doc.get("w", 1.5),
        node_w=doc.get("node_w"),
        transport=doc.get("transport", "in-process"),
        hash_column=doc.get("hash_column", "srcip"),
        explicit_assignment=(
            tuple(doc["explicit_assignment"]) if doc.get("explicit_assignment") else None
        ),
        fail_nodes=tuple(doc.get("fail_nodes", ())),
        retry_budget=doc.get("retry_budget", 3),
        port=doc.get("port", 0),
        allow_any_w=doc.get("allow_any_w", False),
    )


def load_simconfig(path) -> SimulationConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SimulationError(f"simulation config is not valid JSON: {exc}") from exc
    return simconfig_from_doc(doc)


def _assign_nodes(
    records: Sequence[FlowRecord], cfg: SimulationConfig, schema: FeatureSchema | None
) -> list[str]:
    n = len(cfg.nodes)
    if cfg.assignment == "round-robin":
        return [cfg.nodes[i % n] for i in range(len(records))]
    if cfg.assignment == "hash-of-source":
        if schema is None:
            raise SimulationError("hash-of-source assignment needs the record schema")
        idx = schema.index_of(cfg.hash_column)
        out = []
        for rec in records:
            h = hashlib.sha256(rec.values[idx].encode("utf-8")).digest()
            out.append(cfg.nodes[int.from_bytes(h[:8], "big") % n])
        return out
    # explicit
    if cfg.explicit_assignment is None:
        raise SimulationError("explicit assignment requires explicit_assignment in the config")
    if len(cfg.explicit_assignment) != len(records):
        raise SimulationError(
            f"explicit assignment has {len(cfg.explicit_assignment)} entries "
            f"for {len(records)} records"
        )
    known = set(cfg.nodes)
    for name in cfg.explicit_assignment:
        if name not in known:
            raise SimulationError(f"explicit assignment names unknown node {name!r}")
    return list(cfg.explicit_assignment)


def replay(
    records: Sequence[FlowRecord],
    cfg: SimulationConfig,
    schema: FeatureSchema | None = None,
) -> SharedStore:
    """Append every record once under its assigned node, with per-node
    sequence numbers from 1 and interval ids of ``interval_size`` records."""
    if not records:
        raise SimulationError("cannot replay an empty record list")
    assignment = _assign_nodes(records, cfg, schema)
    store = SharedStore()
    seq: dict[str, int] = {node: 0 for node in cfg.nodes}
    for rec, node in zip(records, assignment):
        seq[node] += 1
        s = seq[node]
        store.append(
            CaptureMessage(
                node=node,
                seq=s,
                interval_id=(s - 1) // cfg.interval_size + 1,
                values=rec.values,
                truth=rec.truth,
                origin=rec.origin,
            )
        )
    return store


@dataclass(frozen=True)
class NodeResult:
    node: str
    counts: ConfusionCounts | None
    verdicts: tuple[int, ...]
    n_records: int
    failed: bool
    attempts: int
    error: str | None = None


@dataclass(frozen=True)
class SimulationOutcome:
    node_results: Mapping[str, NodeResult]
    per_node_reports: Mapping[str, MetricsReport]
    aggregate_counts: ConfusionCounts
    aggregate_report: MetricsReport
    failed_nodes: tuple[str, ...]
    partial: bool


def _process_messages(
    messages: Sequence[CaptureMessage],
    preprocess: PreprocessModel,
    profile: NormalProfile,
    det: DetectionConfig,
) -> tuple[ConfusionCounts | None, tuple[int, ...]]:
    """Classify one node's partition, interval batch by interval batch."""
    verdicts: list[int] = []
    truths: list[int] = []
    start = 0
    while start < len(messages):
        stop = start
        interval = messages[start].interval_id
        while stop < len(messages) and messages[stop].interval_id == interval:
            stop += 1
        batch = messages[start:stop]
        for msg in batch:
            if msg.truth is None:
                raise SimulationError(
                    f"record from {msg.origin} has no truth label; metrics are impossible"
                )
        matrix = preprocess.apply_records([m.record() for m in batch])
        flagged = classify_scores(profile.score_matrix(matrix), profile, det)
        verdicts.extend(int(v) for v in flagged)
        truths.extend(m.truth for m in batch)
        start = stop
    if not verdicts:
        return None, ()
    return confusion(verdicts, truths), tuple(verdicts)


def _send_frame(sock: socket.socket, obj: dict) -> None:
    data = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > _MAX_FRAME:
        raise TransportError(f"frame of {length} bytes exceeds the {_MAX_FRAME} limit")
    return json.loads(_recv_exact(sock, length).decode("utf-8"))


#: Failures worth retrying: crashes and transport trouble, not data errors.
_RETRYABLE = (SimulatedNodeFailure, TransportError, OSError)


def _attempt_loop(node: str, cfg: SimulationConfig, attempt_fn) -> tuple[dict | None, int, str | None]:
    """Run one node's work with crash-stop retries. Returns
    (result payload or None, attempts used, last error)."""
    last_error = None
    for attempt in range(1, cfg.retry_budget + 2):
        try:
            if node in cfg.fail_nodes:
                raise SimulatedNodeFailure(f"node {node!r}: injected crash")
            return attempt_fn(), attempt, None
        except _RETRYABLE as exc:
            last_error = f"{type(exc).__name__}: {exc}"
    return None, cfg.retry_budget + 1, last_error


def _payload_from_processing(
    counts: ConfusionCounts | None, verdicts: tuple[int, ...]
) -> dict:
    return {
        "type": "result",
        "counts": None
        if counts is None
        else {"tp": counts.tp, "tn": counts.tn, "fp": counts.fp, "fn": counts.fn},
        "verdicts": list(verdicts),
        "n": len(verdicts),
    }


def _result_from_payload(node: str, payload: dict, attempts: int) -> NodeResult:
    counts_doc = payload["counts"]
    counts = ConfusionCounts(**counts_doc) if counts_doc is not None else None
    return NodeResult(
        node=node,
        counts=counts,
        verdicts=tuple(payload["verdicts"]),
        n_records=payload["n"],
        failed=False,
        attempts=attempts,
    )


def _run_in_process(
    store: SharedStore,
    preprocess: PreprocessModel,
    profile: NormalProfile,
    cfg: SimulationConfig,
) -> dict[str, NodeResult]:
    results: dict[str, NodeResult] = {}
    fatal: list[Exception] = []
    lock = threading.Lock()

    def work(node: str) -> None:
        def attempt():
            store.reset_cursor(node)
            counts, verdicts = _process_messages(
                store.drain(node), preprocess, profile, cfg.w_for(node)
            )
            return _payload_from_processing(counts, verdicts)

        try:
            payload, attempts, error = _attempt_loop(node, cfg, attempt)
        except Exception as exc:  # data errors are fatal, not node failures
            with lock:
                fatal.append(exc)
            return
        if payload is None:
            result = NodeResult(node, None, (), 0, failed=True, attempts=attempts, error=error)
        else:
            result = _result_from_payload(node, payload, attempts)
        with lock:
            results[node] = result

    threads = [threading.Thread(target=work, args=(node,)) for node in cfg.nodes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if fatal:
        raise fatal[0]
    return results


def _run_loopback(
    store: SharedStore,
    preprocess: PreprocessModel,
    profile: NormalProfile,
    cfg: SimulationConfig,
) -> dict[str, NodeResult]:
    server = socket.create_server(("127.0.0.1", cfg.port))
    server.settimeout(0.2)
    port = server.getsockname()[1]
    wire_results: dict[str, dict] = {}
    lock = threading.Lock()
    done = threading.Event()
    handler_threads: list[threading.Thread] = []

    def handle(conn: socket.socket) -> None:
        try:
            with conn:
                conn.settimeout(_SOCKET_TIMEOUT)
                hello = _recv_frame(conn)
                if hello.get("type") != "hello":
                    raise TransportError(f"expected hello frame, got {hello.get('type')!r}")
                node = hello["node"]
                store.reset_cursor(node)
                count = 0
                while (msg := store.read_next(node)) is not None:
                    _send_frame(conn, msg.to_wire())
                    count += 1
                _send_frame(conn, {"type": "end", "count": count})
                payload = _recv_frame(conn)
                if payload.get("type") != "result":
                    raise TransportError(f"expected result frame, got {payload.get('type')!r}")
                with lock:
                    wire_results[node] = payload
                _send_frame(conn, {"type": "ack"})
        except (TransportError, OSError, json.JSONDecodeError):
            pass  # the worker side will retry or give up

    def serve() -> None:
        while not done.is_set():
            try:
                conn, _ = server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=handle, args=(conn,))
            t.start()
            handler_threads.append(t)

    server_thread = threading.Thread(target=serve)
    server_thread.start()

    results: dict[str, NodeResult] = {}
    fatal: list[Exception] = []
    results_lock = threading.Lock()

    def work(node: str) -> None:
        def attempt():
            with socket.create_connection(("127.0.0.1", port), timeout=_SOCKET_TIMEOUT) as sock:
                _send_frame(sock, {"type": "hello", "node": node})
                messages = []
                while True:
                    frame = _recv_frame(sock)
                    if frame["type"] == "capture":
                        messages.append(CaptureMessage.from_wire(frame))
                    elif frame["type"] == "end":
                        break
                    else:
                        raise TransportError(f"unexpected frame type {frame['type']!r}")
                counts, verdicts = _process_messages(
                    messages, preprocess, profile, cfg.w_for(node)
                )
                _send_frame(sock, _payload_from_processing(counts, verdicts))
                ack = _recv_frame(sock)
                if ack.get("type") != "ack":
                    raise TransportError("missing ack from the store service")
            with lock:
                return wire_results[node]

        try:
            payload, attempts, error = _attempt_loop(node, cfg, attempt)
        except Exception as exc:
            with results_lock:
                fatal.append(exc)
            return
        if payload is None:
            result = NodeResult(node, None, (), 0, failed=True, attempts=attempts, error=error)
        else:
            result = _result_from_payload(node, payload, attempts)
        with results_lock:
            results[node] = result

    workers = [threading.Thread(target=work, args=(node,)) for node in cfg.nodes]
    for t in workers:
        t.start()
    for t in workers:
        t.join()
    done.set()
    server_thread.join()
    for t in handler_threads:
        t.join()
    server.close()
    if fatal:
        raise fatal[0]
    return results


def run_simulation(
    store: SharedStore,
    profile: NormalProfile,
    preprocess: PreprocessModel,
    cfg: SimulationConfig,
) -> SimulationOutcome:
    """Run every node over its partition and aggregate the counts.

    The aggregate is the exact field-wise sum of the healthy nodes' counts;
    failed nodes are excluded and flagged, never silently dropped.
    """
    ensure_bound(profile, preprocess)
    for node in cfg.nodes:
        for msg in store.partition(node):
            if msg.truth is None:
                raise SimulationError(
                    f"record from {msg.origin} has no truth label; metrics are impossible"
                )
    if cfg.transport == "in-process":
        results = _run_in_process(store, preprocess, profile, cfg)
    else:
        results = _run_loopback(store, preprocess, profile, cfg)

    failed = tuple(n for n in cfg.nodes if results[n].failed)
    per_node_reports = {}
    aggregate = ConfusionCounts(0, 0, 0, 0)
    any_counts = False
    for node in cfg.nodes:
        res = results[node]
        if res.failed or res.counts is None:
            continue
        det = cfg.w_for(node)
        per_node_reports[node] = metrics(res.counts, w=det.w)
        aggregate = aggregate + res.counts
        any_counts = True
    if not any_counts:
        raise SimulationError(f"no healthy node produced results; failures: {list(failed)}")

    node_ws = {cfg.w_for(n).w for n in cfg.nodes if not results[n].failed}
    aggregate_w = node_ws.pop() if len(node_ws) == 1 else None
    aggregate_report = metrics(aggregate, w=aggregate_w)
    return SimulationOutcome(
        node_results=results,
        per_node_reports=per_node_reports,
        aggregate_counts=aggregate,
        aggregate_report=aggregate_report,
        failed_nodes=failed,
        partial=bool(failed),
    )
