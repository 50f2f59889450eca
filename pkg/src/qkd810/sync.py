"""Two-endpoint offset agreement over a framed byte stream.

Frame: ``u32 length | u8 type | payload`` (little-endian), where ``length``
counts the type byte plus the payload. Message payloads:

=========  ====  =====================================================
HELLO      1     role u8 (0 Alice, 1 Bob), resolution u32 (ps/unit)
HIST_REQ   2     origin i64 (ps), bin_width u32 (ps), bin_count u32
HIST_RESP  3     bin_count x u32 counts
OFFSET     4     offset i64 (ps)
BYE        5     empty
=========  ====  =====================================================

Alice initiates: HELLO exchange, one or more HIST_REQ/HIST_RESP rounds,
OFFSET, BYE. Only binned counts cross the wire.
"""
from __future__ import annotations

import enum
import itertools
import queue
import socket
import struct
import threading

import numpy as np

from . import kernels
from .coincidence import best_shift
from .errors import NoPeak, ProtocolViolation, SyncError, Timeout, VersionMismatch
from .tagio import TagStream

FRAME_HEADER = struct.Struct("<IB")
MAX_FRAME = 64 * 1024 * 1024


class Msg(enum.IntEnum):
    HELLO = 1
    HIST_REQ = 2
    HIST_RESP = 3
    OFFSET = 4
    BYE = 5


ALICE, BOB = 0, 1
_HELLO = struct.Struct("<BI")
_HIST_REQ = struct.Struct("<qII")
_OFFSET = struct.Struct("<q")


def encode_frame(kind, payload=b""):
    return FRAME_HEADER.pack(len(payload) + 1, int(kind)) + payload


def decode_frame(data):
    """Split one complete frame into ``(Msg, payload)``."""
    if len(data) < FRAME_HEADER.size:
        raise ProtocolViolation("short frame")
    length, kind = FRAME_HEADER.unpack_from(data)
    if length < 1 or length != len(data) - 4:
        raise ProtocolViolation("frame length field does not match frame size")
    try:
        kind = Msg(kind)
    except ValueError:
        raise ProtocolViolation(f"unknown message type {kind}") from None
    return kind, bytes(data[FRAME_HEADER.size:])


def hello(role, resolution):
    return encode_frame(Msg.HELLO, _HELLO.pack(role, resolution))


def hist_req(origin, bin_width, bin_count):
    return encode_frame(Msg.HIST_REQ, _HIST_REQ.pack(origin, bin_width, bin_count))


def hist_resp(counts):
    return encode_frame(Msg.HIST_RESP, np.asarray(counts, "<u4").tobytes())


def offset_msg(value):
    return encode_frame(Msg.OFFSET, _OFFSET.pack(value))


def bye():
    return encode_frame(Msg.BYE)


def _unpack(st, payload, kind):
    if len(payload) != st.size:
        raise ProtocolViolation(f"{kind.name} payload must be {st.size} bytes, got {len(payload)}")
    return st.unpack(payload)


# ---------------------------------------------------------------------------
# state machine


class ProtocolMachine:
    """Tracks which message an endpoint may receive next.

    Bob: HELLO, then any number of HIST_REQ, then OFFSET, then BYE.
    Alice: HELLO, then one HIST_RESP per outstanding HIST_REQ.
    """

    def __init__(self, role):
        self.role = role
        self.state = "start"
        self.pending = 0

    def expected(self):
        if self.role == BOB:
            return {"start": {Msg.HELLO}, "ready": {Msg.HIST_REQ, Msg.OFFSET},
                    "announced": {Msg.BYE}, "closed": set()}[self.state]
        if self.state == "start":
            return {Msg.HELLO}
        return {Msg.HIST_RESP} if self.pending else set()

    def receive(self, kind):
        kind = Msg(kind)
        if kind not in self.expected():
            raise ProtocolViolation(f"unexpected {kind.name} in state {self.state!r}")
        if self.role == BOB:
            self.state = {Msg.HELLO: "ready", Msg.HIST_REQ: "ready", Msg.OFFSET: "announced",
                          Msg.BYE: "closed"}[kind]
        elif kind == Msg.HELLO:
            self.state = "ready"
        else:
            self.pending -= 1

    def sent_request(self):
        self.pending += 1


# ---------------------------------------------------------------------------
# transports


class LoopbackTransport:
    """One end of an in-memory byte pipe; create both ends with :meth:`pair`."""

    def __init__(self, inbox, outbox, timeout=10.0):
        self._in = inbox
        self._out = outbox
        self._buf = bytearray()
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout=10.0):
        q1, q2 = queue.Queue(), queue.Queue()
        return cls(q1, q2, timeout), cls(q2, q1, timeout)

    def send(self, data):
        self._out.put(bytes(data))

    def recv_exact(self, n):
        while len(self._buf) < n:
            try:
                self._buf += self._in.get(timeout=self.timeout)
            except queue.Empty:
                raise Timeout(f"no data within {self.timeout} s") from None
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def close(self):
        pass


class SocketTransport:
    def __init__(self, sock, timeout=10.0):
        self.sock = sock
        sock.settimeout(timeout)

    def send(self, data):
        self.sock.sendall(data)

    def recv_exact(self, n):
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                raise Timeout("socket receive timed out") from None
            if not chunk:
                raise ProtocolViolation("connection closed mid-frame")
            buf += chunk
        return bytes(buf)

    def close(self):
        self.sock.close()


def read_frame(transport):
    length, kind = FRAME_HEADER.unpack(transport.recv_exact(FRAME_HEADER.size))
    if length < 1 or length > MAX_FRAME:
        raise ProtocolViolation(f"frame length {length} out of range")
    payload = transport.recv_exact(length - 1) if length > 1 else b""
    try:
        return Msg(kind), payload
    except ValueError:
        raise ProtocolViolation(f"unknown message type {kind}") from None


# ---------------------------------------------------------------------------
# session logic


def bin_counts(times, origin, bin_width, bin_count):
    t = np.asarray(times, np.int64)
    lo, hi = np.searchsorted(t, [origin, origin + bin_width * bin_count], "left")
    k = (t[lo:hi] - origin) // bin_width
    return np.bincount(k, minlength=bin_count).astype(np.int64)


def _sparse(counts):
    idx = np.flatnonzero(counts)
    return idx.astype(np.int64), counts[idx].astype(np.int64)


def _serve(transport, machine, stream, resolution):
    """Bob's side: answer histogram requests until OFFSET and BYE arrive."""
    agreed = None
    while True:
        kind, payload = read_frame(transport)
        machine.receive(kind)
        if kind == Msg.HELLO:
            role, res = _unpack(_HELLO, payload, kind)
            if role != ALICE:
                raise ProtocolViolation("peer must take the initiator role")
            transport.send(hello(BOB, resolution))
            if res != resolution:
                raise VersionMismatch(f"peer resolution {res} ps != local {resolution} ps")
        elif kind == Msg.HIST_REQ:
            origin, width, count = _unpack(_HIST_REQ, payload, kind)
            if width < 1 or count < 1 or count * 4 + 1 > MAX_FRAME:
                raise ProtocolViolation("histogram request out of range")
            transport.send(hist_resp(bin_counts(stream.times, origin, width, count)))
        elif kind == Msg.OFFSET:
            (agreed,) = _unpack(_OFFSET, payload, kind)
        elif kind == Msg.BYE:
            return agreed


PIPELINE_DEPTH = 32


def _request_groups(times, lo, bin_width, n_corr, max_bins):
    """Split Alice's tags into requests that reproduce the offline correlation.

    Tags sharing a phase ``(t - lo) mod bin_width`` see Bob's bins on the
    same grid, with edges exactly at ``t + lo + j * bin_width``. A group is
    cut where windows stop overlapping or the request would exceed
    ``max_bins``. Yields ``(origin, alice_bin_index, weight, n_bins)``.
    """
    phase = (times - lo) % bin_width
    order = np.lexsort((times, phase))
    t, ph = times[order], phase[order]
    cut = np.ones(t.size, bool)
    cut[1:] = (ph[1:] != ph[:-1]) | (np.diff(t) > n_corr * bin_width)
    bounds = np.r_[np.flatnonzero(cut), t.size]
    span_limit = max(1, max_bins - n_corr) * bin_width
    for g0, g1 in zip(bounds[:-1], bounds[1:]):
        while g0 < g1:
            first = int(t[g0])
            end = g0 + int(np.searchsorted(t[g0:g1], first + span_limit, "left"))
            idx, w = np.unique((t[g0:end] - first) // bin_width, return_counts=True)
            yield first + lo, idx.astype(np.int64), w.astype(np.int64), int(idx[-1]) + n_corr
            g0 = end


def _initiate(transport, machine, stream, resolution, bin_width, search_range, max_span, max_bins):
    transport.send(hello(ALICE, resolution))
    kind, payload = read_frame(transport)
    machine.receive(kind)
    role, res = _unpack(_HELLO, payload, kind)
    if role != BOB:
        raise ProtocolViolation("peer must take the responder role")
    if res != resolution:
        transport.send(bye())
        raise VersionMismatch(f"peer resolution {res} ps != local {resolution} ps")

    times = stream.times
    if times.size == 0:
        raise NoPeak("local stream is empty")
    if max_span is not None:
        times = times[times < int(times[0]) + int(max_span)]
    k_range = int(search_range // bin_width)
    n_corr = 2 * k_range + 1
    lo = -k_range * bin_width - bin_width // 2  # same bin edges as the offline search
    corr = np.zeros(n_corr, np.int64)
    groups = _request_groups(times, lo, bin_width, n_corr, max_bins)
    # requests are pipelined; responses come back in request order
    while True:
        sent = list(itertools.islice(groups, PIPELINE_DEPTH))
        if not sent:
            break
        for origin, _, _, n_bins in sent:
            transport.send(hist_req(origin, bin_width, n_bins))
            machine.sent_request()
        for _, ia, wa, n_bins in sent:
            kind, payload = read_frame(transport)
            machine.receive(kind)
            if len(payload) != 4 * n_bins:
                raise ProtocolViolation("histogram response has the wrong number of bins")
            ib, wb = _sparse(np.frombuffer(payload, "<u4").astype(np.int64))
            corr += kernels.diff_histogram(ia, ib, 0, 1, n_corr, wa, wb)
    shifts = (np.arange(corr.size) - k_range) * int(bin_width)
    best = shifts[best_shift(corr, shifts)]
    transport.send(offset_msg(int(best)))
    transport.send(bye())
    return int(best)


def run_sync(role, stream: TagStream, transport, *, resolution=1, bin_width=100, search_range=50_000,
             max_span=None, max_bins=1 << 20):
    """Agree on the coincidence offset (ps, ``tb - ta`` convention).

    Alice returns the offset she computes and announces; Bob returns the
    announced value.
    """
    role = {"alice": ALICE, "bob": BOB}.get(role, role)
    if role not in (ALICE, BOB):
        raise SyncError(f"unknown role {role!r}")
    machine = ProtocolMachine(role)
    if role == BOB:
        agreed = _serve(transport, machine, stream, resolution)
        if agreed is None:
            raise ProtocolViolation("session closed without an offset")
        return int(agreed)
    return _initiate(transport, machine, stream, resolution, int(bin_width), int(search_range), max_span,
                     int(max_bins))


def sync_loopback(stream_a, stream_b, **kwargs):
    """Run both endpoints over an in-memory transport; returns ``(alice, bob)``."""
    ta, tb = LoopbackTransport.pair(kwargs.pop("timeout", 10.0))
    result = {}

    def bob():
        try:
            result["bob"] = run_sync(BOB, stream_b, tb, resolution=kwargs.get("resolution", 1))
        except Exception as exc:  # surfaced to the caller below
            result["bob_error"] = exc

    th = threading.Thread(target=bob, daemon=True)
    th.start()
    try:
        alice = run_sync(ALICE, stream_a, ta, **kwargs)
    finally:
        th.join(timeout=30)
    if "bob_error" in result:
        raise result["bob_error"]
    return alice, result["bob"]
