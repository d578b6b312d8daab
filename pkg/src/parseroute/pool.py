"""Persistent worker pools for parsers.

A pool owns ``worker_count`` workers (processes by default). Warm workers
initialize their parser once and then serve tasks until shut down; cold
workers re-initialize per task. A manager thread hands each task to an idle
worker, so the parent always knows which document a worker holds. When a
worker dies mid-task it is respawned and the task is retried once, then
reported as failed.

Back-pressure: at most ``worker_count + queue_capacity`` tasks may be
submitted and not yet collected; ``submit`` blocks beyond that.
"""

from __future__ import annotations

import collections
import itertools
import logging
import multiprocessing as mp
import os
import queue
import signal
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .corpus import DocumentRecord
from .metrics import MetricConfig, QualityScores, quality_scores
from .parsers import ParseResult, ParserProfile, SimulatedCrash, make_adapter

logger = logging.getLogger(__name__)

_CRASH_EXIT = 70


class PoolBrokenError(RuntimeError):
    pass


@dataclass
class PoolStats:
    initializations: int = 0
    respawns: int = 0
    crashes: int = 0
    retries: int = 0
    completed: int = 0
    failed_after_retry: int = 0
    peak_in_flight: int = 0


@dataclass
class PoolResult:
    task_id: int
    doc_id: str
    mode: str
    result: ParseResult | None = None
    first_page: str | None = None
    scores: QualityScores | None = None
    seconds: float = 0.0
    attempts: int = 1
    tag: object = None


@dataclass
class _Task:
    task_id: int
    mode: str
    doc: DocumentRecord
    tag: object = None
    attempts: int = 0


def _run_task(adapter, mode: str, doc: DocumentRecord, metric_cfg: MetricConfig | None):
    start = time.perf_counter()
    if mode == "first_page":
        text = adapter.parse_first_page(doc)
        return None, text, None, time.perf_counter() - start
    res = adapter.parse(doc)
    scores = None
    if metric_cfg is not None and doc.groundtruth is not None:
        scores = quality_scores(res.pages, doc.groundtruth, len(doc.pages), metric_cfg)
    return res, None, scores, time.perf_counter() - start


def _worker_loop(wid, profile, inq, outq, metric_cfg, hard_crash):
    adapter = make_adapter(profile)
    if profile.warm_start:
        adapter.initialize()
        outq.put(("init", wid))
    while True:
        item = inq.get()
        if item is None:
            return
        task_id, mode, doc = item
        if not profile.warm_start:
            adapter.initialize()
            outq.put(("init", wid))
        try:
            payload = _run_task(adapter, mode, doc, metric_cfg)
        except SimulatedCrash:
            if hard_crash:
                outq.close()
                outq.join_thread()
                os._exit(_CRASH_EXIT)
            outq.put(("crash", wid, task_id))
            return
        outq.put(("done", wid, task_id, payload))


class _Worker:
    def __init__(self, pool: "WorkerPool", wid: int):
        self.wid = wid
        self.current: _Task | None = None
        self.dead = False
        self.inq = pool._ctx.Queue() if pool.backend == "process" else queue.Queue()
        args = (wid, pool.profile, self.inq, pool._outq, pool.metric_cfg, pool.backend == "process")
        if pool.backend == "process":
            self.handle = pool._ctx.Process(target=_worker_loop, args=args, daemon=True)
        else:
            self.handle = threading.Thread(target=_worker_loop, args=args, daemon=True)
        self.handle.start()

    def alive(self) -> bool:
        return not self.dead and self.handle.is_alive()

    def stop(self) -> None:
        try:
            self.inq.put(None)
        except (OSError, ValueError):
            pass


class WorkerPool:
    def __init__(
        self,
        profile: ParserProfile,
        worker_count: int,
        queue_capacity: int | None = None,
        backend: str = "process",
        metric_cfg: MetricConfig | None = None,
        max_retries: int = 1,
        max_respawns: int | None = None,
        start_method: str | None = None,
    ):
        if worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if backend not in ("process", "thread"):
            raise ValueError(f"unknown backend {backend!r}")
        self.profile = profile
        self.worker_count = worker_count
        self.queue_capacity = worker_count * 2 if queue_capacity is None else queue_capacity
        self.backend = backend
        self.metric_cfg = metric_cfg
        self.max_retries = max_retries
        self.max_respawns = max_respawns
        self.stats = PoolStats()

        if backend == "process":
            method = start_method or ("fork" if "fork" in mp.get_all_start_methods() else "spawn")
            self._ctx = mp.get_context(method)
            self._outq = self._ctx.Queue()
        else:
            self._ctx = None
            self._outq = queue.Queue()

        self._slots = threading.BoundedSemaphore(self.worker_count + self.queue_capacity)
        self._lock = threading.Lock()
        self._pending: collections.deque[_Task] = collections.deque()
        self._results: queue.Queue[PoolResult] = queue.Queue()
        self._ids = itertools.count()
        self._in_flight = 0
        self._uncollected = 0
        self._closing = False
        self._broken: str | None = None
        self._wake = threading.Event()

        self._workers = [_Worker(self, i) for i in range(worker_count)]
        self._manager = threading.Thread(target=self._manage, name=f"pool-{profile.parser_id}", daemon=True)
        self._manager.start()

    # ------------------------------------------------------------ client side

    def submit(self, doc: DocumentRecord, mode: str = "parse", tag: object = None) -> int:
        if mode not in ("parse", "first_page"):
            raise ValueError(f"unknown mode {mode!r}")
        self._check_broken()
        self._slots.acquire()
        task = _Task(next(self._ids), mode, doc, tag)
        with self._lock:
            self._in_flight += 1
            self._uncollected += 1
            self.stats.peak_in_flight = max(self.stats.peak_in_flight, self._in_flight)
            self._pending.append(task)
        self._wake.set()
        return task.task_id

    def get(self, timeout: float | None = None) -> PoolResult:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            try:
                res = self._results.get(timeout=0.05)
            except queue.Empty:
                self._check_broken()
                if deadline is not None and time.monotonic() > deadline:
                    raise
                continue
            with self._lock:
                self._uncollected -= 1
            self._slots.release()
            return res

    def map(self, docs: Iterable[DocumentRecord], mode: str = "parse") -> Iterator[PoolResult]:
        """Submit from a feeder thread and yield results in completion order."""
        docs = list(docs)
        errors: list[BaseException] = []

        def feed():
            try:
                for d in docs:
                    self.submit(d, mode)
            except BaseException as exc:  # surfaced to the consumer below
                errors.append(exc)

        feeder = threading.Thread(target=feed, daemon=True)
        feeder.start()
        for _ in range(len(docs)):
            if errors:
                raise errors[0]
            yield self.get()
        feeder.join()

    @property
    def in_flight(self) -> int:
        with self._lock:
            return self._in_flight

    def kill_worker(self, index: int = 0) -> int:
        """Fault injection: SIGKILL one worker process. Returns its pid."""
        if self.backend != "process":
            raise RuntimeError("kill_worker needs the process backend")
        w = self._workers[index]
        os.kill(w.handle.pid, signal.SIGKILL)
        return w.handle.pid

    def busy_workers(self) -> list[int]:
        with self._lock:
            return [w.wid for w in self._workers if w.current is not None]

    def close(self, wait: bool = True) -> None:
        self._closing = True
        self._wake.set()
        if wait:
            self._manager.join()
        for w in self._workers:
            w.stop()
        for w in self._workers:
            if self.backend == "process":
                w.handle.join(timeout=5)
                if w.handle.is_alive():
                    w.handle.kill()
            else:
                w.handle.join(timeout=5)

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close(wait=exc[0] is None)

    def _check_broken(self) -> None:
        if self._broken:
            raise PoolBrokenError(self._broken)

    # ------------------------------------------------------------ manager

    def _emit(self, task: _Task, payload=None, error: str = "") -> None:
        if payload is None:
            result = ParseResult(task.doc.doc_id, self.profile.parser_id, "", 0, 0.0, "failed", (), error)
            first = "" if task.mode == "first_page" else None
            res = PoolResult(task.task_id, task.doc.doc_id, task.mode,
                             None if task.mode == "first_page" else result, first,
                             None, 0.0, task.attempts, task.tag)
        else:
            result, first, scores, seconds = payload
            res = PoolResult(task.task_id, task.doc.doc_id, task.mode, result, first, scores, seconds,
                             task.attempts, task.tag)
        with self._lock:
            self._in_flight -= 1
            self.stats.completed += 1
        self._results.put(res)

    def _handle_crash(self, w: _Worker) -> None:
        task = w.current
        w.current = None
        w.dead = True
        self.stats.crashes += 1
        if task is not None:
            if task.attempts <= self.max_retries:
                self.stats.retries += 1
                with self._lock:
                    self._pending.appendleft(task)
            else:
                self.stats.failed_after_retry += 1
                logger.warning("%s: %s failed after %d attempts", self.profile.parser_id,
                               task.doc.doc_id, task.attempts)
                self._emit(task, error=f"worker crashed {task.attempts} times")
        if self._closing and not self._pending and all(x.current is None for x in self._workers):
            return
        if self.max_respawns is not None and self.stats.respawns >= self.max_respawns:
            if not any(x.alive() for x in self._workers):
                self._broken = f"all workers of {self.profile.parser_id} are dead"
            return
        if self.backend == "process":
            w.handle.join(timeout=1)
        self._workers[w.wid] = _Worker(self, w.wid)
        self.stats.respawns += 1

    def _dispatch(self) -> None:
        for w in self._workers:
            if w.current is not None or w.dead:
                continue
            with self._lock:
                if not self._pending:
                    return
                task = self._pending.popleft()
            task.attempts += 1
            w.current = task
            w.inq.put((task.task_id, task.mode, task.doc))

    def _manage(self) -> None:
        by_id: dict[int, _Worker] = {}
        while True:
            if self._broken:
                return
            self._dispatch()
            by_id = {w.wid: w for w in self._workers}
            try:
                msg = self._outq.get(timeout=0.01)
            except queue.Empty:
                msg = None
            if msg is not None:
                kind, wid = msg[0], msg[1]
                w = by_id.get(wid)
                if kind == "init":
                    self.stats.initializations += 1
                elif kind == "done" and w is not None and w.current is not None and w.current.task_id == msg[2]:
                    task = w.current
                    w.current = None
                    self._emit(task, msg[3])
                elif kind == "crash" and w is not None:
                    self._handle_crash(w)
            for w in list(self._workers):
                if not w.dead and not w.handle.is_alive():
                    # drain messages the worker sent before dying
                    if self._drain_for(w):
                        continue
                    self._handle_crash(w)
            if self._closing:
                with self._lock:
                    idle = not self._pending and all(w.current is None for w in self._workers)
                if idle:
                    return

    def _drain_for(self, w: _Worker) -> bool:
        """Process queued messages; True if ``w`` finished its task meanwhile."""
        got = False
        while True:
            try:
                msg = self._outq.get_nowait()
            except queue.Empty:
                return got
            kind, wid = msg[0], msg[1]
            target = next((x for x in self._workers if x.wid == wid), None)
            if kind == "init":
                self.stats.initializations += 1
            elif kind == "done" and target is not None and target.current is not None \
                    and target.current.task_id == msg[2]:
                task = target.current
                target.current = None
                self._emit(task, msg[3])
            elif kind == "crash" and target is not None:
                self._handle_crash(target)
                if target is w:
                    got = True


def warm_pool(parser: ParserProfile, worker_count: int, **kw) -> WorkerPool:
    if not parser.warm_start:
        raise ValueError(f"parser {parser.parser_id!r} is not configured for warm start")
    return WorkerPool(parser, worker_count, **kw)
