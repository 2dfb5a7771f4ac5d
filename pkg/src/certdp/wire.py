"""Transport: length-prefixed typed frames over in-memory pipes or TCP
streams, plus a virtual-clock bandwidth/latency model for network studies.

Frame layout on the wire: u32 payload length (LE), u16 message type, u64
session id, payload bytes. Maximum payload 16 MiB. In-memory pipes encode
and decode the same bytes as the socket path so byte counts are real.

The network model is trace-driven and deterministic: a channel records
(direction, bytes) per frame; a NetProfile then charges serialization at
bytes*8/bandwidth and one half-RTT per direction switch. Wall-clock shaping
(actually sleeping) is available for demonstrations but is never used by
tests.
"""

from __future__ import annotations

import queue
import socket
import struct
import time
from dataclasses import dataclass, field
from enum import IntEnum

MAX_PAYLOAD = 16 * 1024 * 1024
_HEADER = struct.Struct("<IHQ")


class Msg(IntEnum):
    HELLO_PARAMS = 1
    PARAMS_ACK = 2
    DATA_COMMIT = 3
    GRAD_PROOF = 4
    GRAD_VERDICT = 5
    COIN_COMMIT = 6
    COIN_REVEAL = 7
    RVCS_PROOF = 8
    RVCS_VERDICT = 9
    OPEN_FINAL = 10
    ACCEPT = 11
    REJECT = 12
    DEALER_REQ = 13
    DEALER_RESP = 14
    FORGET_SET = 15
    BYE = 16


@dataclass(frozen=True)
class Frame:
    msg_type: int
    session_id: int
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload {len(self.payload)} exceeds 16 MiB")
        return _HEADER.pack(len(self.payload), self.msg_type,
                            self.session_id) + self.payload


def decode_frame(blob: bytes) -> Frame:
    if len(blob) < _HEADER.size:
        raise ValueError("short frame")
    length, mtype, sid = _HEADER.unpack_from(blob)
    if length != len(blob) - _HEADER.size:
        raise ValueError("frame length mismatch")
    if length > MAX_PAYLOAD:
        raise ValueError("oversize frame")
    return Frame(mtype, sid, blob[_HEADER.size:])


class ChannelClosed(Exception):
    pass


@dataclass
class ChannelStats:
    frames_sent: int = 0
    bytes_sent: int = 0
    frames_recv: int = 0
    bytes_recv: int = 0
    log: list = field(default_factory=list)   # (direction, nbytes)


class PipeChannel:
    """One endpoint of an in-memory duplex channel; encodes real bytes."""

    def __init__(self, out_q: queue.Queue, in_q: queue.Queue, name: str):
        self._out = out_q
        self._in = in_q
        self.name = name
        self.stats = ChannelStats()
        self.timeout = 120.0

    @staticmethod
    def pair() -> tuple["PipeChannel", "PipeChannel"]:
        a2b, b2a = queue.Queue(), queue.Queue()
        return (PipeChannel(a2b, b2a, "a"), PipeChannel(b2a, a2b, "b"))

    def send(self, frame: Frame):
        blob = frame.encode()
        self.stats.frames_sent += 1
        self.stats.bytes_sent += len(blob)
        self.stats.log.append(("send", len(blob)))
        self._out.put(blob)

    def recv(self) -> Frame:
        try:
            blob = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelClosed("recv timeout")
        if blob is None:
            raise ChannelClosed("peer closed")
        self.stats.frames_recv += 1
        self.stats.bytes_recv += len(blob)
        self.stats.log.append(("recv", len(blob)))
        return decode_frame(blob)

    def close(self):
        self._out.put(None)


class TcpChannel:
    """Socket-backed channel with the same frame codec."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self.stats = ChannelStats()

    @staticmethod
    def connect(host: str, port: int, timeout: float = 30.0) -> "TcpChannel":
        s = socket.create_connection((host, port), timeout=timeout)
        s.settimeout(timeout)
        return TcpChannel(s)

    @staticmethod
    def listen(host: str, port: int) -> socket.socket:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(8)
        return srv

    @staticmethod
    def accept(srv: socket.socket, timeout: float = 30.0) -> "TcpChannel":
        srv.settimeout(timeout)
        conn, _ = srv.accept()
        conn.settimeout(timeout)
        return TcpChannel(conn)

    def send(self, frame: Frame):
        blob = frame.encode()
        self.stats.frames_sent += 1
        self.stats.bytes_sent += len(blob)
        self.stats.log.append(("send", len(blob)))
        self._sock.sendall(blob)

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise ChannelClosed("socket closed")
            buf += chunk
        return buf

    def recv(self) -> Frame:
        head = self._read_exact(_HEADER.size)
        length, mtype, sid = _HEADER.unpack(head)
        if length > MAX_PAYLOAD:
            raise ValueError("oversize frame")
        payload = self._read_exact(length) if length else b""
        self.stats.frames_recv += 1
        self.stats.bytes_recv += len(head) + length
        self.stats.log.append(("recv", len(head) + length))
        return Frame(mtype, sid, payload)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


# -- network profiles and the virtual clock ------------------------------------

@dataclass(frozen=True)
class NetProfile:
    name: str
    bandwidth_mbit: float   # inf for localhost
    rtt_ms: float

    def __post_init__(self):
        if self.bandwidth_mbit <= 0 or self.rtt_ms < 0:
            raise ValueError("bandwidth must be positive, rtt non-negative")

    def serialization_s(self, nbytes: int) -> float:
        if self.bandwidth_mbit == float("inf"):
            return 0.0
        return nbytes * 8.0 / (self.bandwidth_mbit * 1e6)


PROFILES = {
    "localhost": NetProfile("localhost", float("inf"), 0.0),
    "lan": NetProfile("lan", 1000.0, 2.0),
    "wan200": NetProfile("wan200", 200.0, 50.0),
    "wan100": NetProfile("wan100", 100.0, 50.0),
}


def parse_net_profile(spec: str) -> NetProfile:
    if spec in PROFILES:
        return PROFILES[spec]
    if spec.startswith("custom:"):
        _, bw, rtt = spec.split(":")
        return NetProfile(spec, float(bw), float(rtt))
    raise ValueError(f"unknown net profile {spec!r}; use "
                     "localhost|lan|wan200|wan100|custom:BW:RTT")


def network_delay(log, profile: NetProfile) -> float:
    """Trace-driven network time for one endpoint's (direction, bytes) log:
    full serialization for every frame plus one half-RTT per direction
    switch (batched same-direction frames share the latency)."""
    total = 0.0
    last_dir = None
    for direction, nbytes in log:
        total += profile.serialization_s(nbytes)
        if direction != last_dir:
            total += profile.rtt_ms * 1e-3 / 2.0
            last_dir = direction
    return total


def simulate(profile: NetProfile):
    """Channel pair whose shared virtual clock accrues the profile's delays;
    `clock.elapsed` is deterministic for a fixed message trace."""
    a, b = PipeChannel.pair()
    clock = VirtualClock(profile)
    return SimChannel(a, clock), SimChannel(b, clock), clock


class VirtualClock:
    def __init__(self, profile: NetProfile):
        self.profile = profile
        self.elapsed = 0.0
        self._last_dir = None

    def charge(self, endpoint: str, nbytes: int):
        self.elapsed += self.profile.serialization_s(nbytes)
        if endpoint != self._last_dir:
            self.elapsed += self.profile.rtt_ms * 1e-3 / 2.0
            self._last_dir = endpoint


class SimChannel:
    """PipeChannel wrapper charging a shared virtual clock per frame."""

    def __init__(self, inner: PipeChannel, clock: VirtualClock,
                 wall_clock: bool = False):
        self._inner = inner
        self._clock = clock
        self._wall = wall_clock
        self.stats = inner.stats

    def send(self, frame: Frame):
        blob_len = len(frame.payload) + _HEADER.size
        self._clock.charge(self._inner.name, blob_len)
        if self._wall:
            time.sleep(self._clock.profile.serialization_s(blob_len))
        self._inner.send(frame)

    def recv(self) -> Frame:
        return self._inner.recv()

    def close(self):
        self._inner.close()


# -- payload scalar/vector codecs -------------------------------------------------

def pack_residues(vals, width: int) -> bytes:
    out = bytearray()
    for v in vals:
        out += int(v).to_bytes(width, "little")
    return bytes(out)


def unpack_residues(blob: bytes, width: int) -> list:
    if len(blob) % width:
        raise ValueError("residue payload not a multiple of width")
    return [int.from_bytes(blob[i:i + width], "little")
            for i in range(0, len(blob), width)]


def pack_bits(bits) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b & 1:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def unpack_bits(blob: bytes, count: int) -> list:
    return [(blob[i >> 3] >> (i & 7)) & 1 for i in range(count)]
