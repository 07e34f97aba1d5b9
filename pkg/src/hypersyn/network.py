"""In-process transport shared by tests and the simulator.

Request/response calls (``rpc``) run synchronously inside the caller's turn: a
lost request surfaces as :class:`PeerUnreachable`. One-way messages (``send``)
and deferred work (``defer``) go through an event queue ordered by
(time, insertion sequence), which keeps runs reproducible.
"""

from __future__ import annotations

import heapq
import itertools
from collections import Counter
from typing import Callable, Optional

from .errors import PeerUnreachable


class LocalNetwork:
    def __init__(self, delay: int = 0):
        self.nodes: dict[bytes, object] = {}
        self.clock = 0
        self.delay = delay
        self.down: set[bytes] = set()
        # drop(src, dst, msg) -> True loses the message
        self.drop: Optional[Callable] = None
        self.counts: Counter = Counter()
        self.events: list[dict] = []
        self.record_events = False
        self._queue: list = []
        self._seq = itertools.count()

    def register(self, node) -> None:
        self.nodes[node.address] = node

    def now(self) -> int:
        return self.clock

    def tick(self, n: int = 1) -> None:
        self.clock += n

    # -- delivery policy (overridden by the simulator) ---------------------

    def reachable(self, src: bytes, dst: bytes) -> bool:
        return dst in self.nodes and dst not in self.down and src not in self.down

    def lost(self, src: bytes, dst: bytes, msg) -> bool:
        return self.drop is not None and bool(self.drop(src, dst, msg))

    def message_delay(self, src: bytes, dst: bytes) -> int:
        return self.delay

    # -- transport --------------------------------------------------------

    def rpc(self, src: bytes, dst: bytes, msg, reliable: bool = False):
        name = type(msg).__name__
        if not self.reachable(src, dst) or (not reliable and self.lost(src, dst, msg)):
            self.counts["lost:" + name] += 1
            raise PeerUnreachable(f"{name} to {dst.hex()[:8]} not delivered")
        self.counts[name] += 1
        reply = self.nodes[dst].handle_rpc(src, msg)
        if reply is not None:
            self.counts[type(reply).__name__] += 1
        return reply

    def send(self, src: bytes, dst: bytes, msg) -> None:
        name = type(msg).__name__
        if self.lost(src, dst, msg):
            self.counts["lost:" + name] += 1
            return
        self.counts[name] += 1
        self._push(self.clock + self.message_delay(src, dst), self._deliver, src, dst, msg)

    def _deliver(self, src: bytes, dst: bytes, msg) -> None:
        if self.reachable(src, dst):
            self.nodes[dst].handle_message(src, msg)

    def defer(self, addr: bytes, fn: Callable, *args) -> None:
        self._push(self.clock, self._run_deferred, addr, fn, args)

    def _run_deferred(self, addr: bytes, fn: Callable, args) -> None:
        if addr not in self.down:
            fn(*args)

    def schedule(self, time: int, fn: Callable, *args) -> None:
        self._push(time, fn, *args)

    def _push(self, time: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (time, next(self._seq), fn, args))

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        time, _, fn, args = heapq.heappop(self._queue)
        self.clock = max(self.clock, time)
        fn(*args)
        return True

    def run(self, until: Optional[int] = None, max_events: int = 10**7) -> int:
        """Process queued events (up to time ``until``); returns how many ran."""
        n = 0
        while self._queue and n < max_events:
            if until is not None and self._queue[0][0] > until:
                break
            self.step()
            n += 1
        if until is not None:
            self.clock = max(self.clock, until)
        return n

    # -- observability ----------------------------------------------------

    def record(self, kind: str, /, **payload) -> None:
        if self.record_events:
            self.events.append({"tick": self.clock, "type": kind, **payload})

    def lookup_file(self, requester: bytes, node_id: bytes):
        node = self.nodes.get(requester)
        dht = getattr(node, "dht", None)
        if dht is None:
            return None
        try:
            return dht.lookup(node_id)
        except Exception:
            return None
