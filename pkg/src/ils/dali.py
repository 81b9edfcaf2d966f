"""Simulated DALI network: forward-frame codec, control gears, bus and TCP gateway.

Forward frames are 16 bits, address byte first::

    0AAAAAAS  short address A (0-63)
    100GGGGS  group G (0-15)
    1111111S  broadcast

S = 0 means the data byte is a direct arc power level (DAPC), S = 1 means it
is a command opcode.  Every other address byte (101xxxxx, 110xxxxx,
1111110x) is a special command, reported as such and ignored by gears.
"""

from __future__ import annotations

import queue
import socketserver
import threading
from concurrent.futures import Future
from dataclasses import dataclass, replace
from typing import Optional

MAX_LEVEL = 254
MASK = 255
MAX_GEARS = 64

OFF = 0x00
RECALL_MAX_LEVEL = 0x05
RECALL_MIN_LEVEL = 0x06
ADD_TO_GROUP = 0x60  # + group
REMOVE_FROM_GROUP = 0x70  # + group
QUERY_LAMP_POWER_ON = 0x93
QUERY_ACTUAL_LEVEL = 0xA0
QUERY_GROUPS_0_7 = 0xC0
QUERY_GROUPS_8_15 = 0xC1
YES = 0xFF


class DaliError(ValueError):
    pass


# --- addresses and payloads -----------------------------------------------------

@dataclass(frozen=True)
class Short:
    address: int

    def __post_init__(self):
        if not 0 <= self.address <= 63:
            raise DaliError(f"short address {self.address} out of range 0-63")


@dataclass(frozen=True)
class Group:
    group: int

    def __post_init__(self):
        if not 0 <= self.group <= 15:
            raise DaliError(f"group {self.group} out of range 0-15")


@dataclass(frozen=True)
class Broadcast:
    pass


@dataclass(frozen=True)
class Special:
    """Reserved or special-command address byte, passed through uninterpreted."""
    byte: int


@dataclass(frozen=True)
class Dapc:
    level: int


@dataclass(frozen=True)
class Command:
    opcode: int

    def __post_init__(self):
        if not 0 <= self.opcode <= 255:
            raise DaliError(f"opcode {self.opcode} out of range")


def encode_frame(addr, payload):
    """16-bit forward frame for an address and a DAPC level or command."""
    if isinstance(payload, Dapc):
        if not 0 <= payload.level <= MASK:  # 255 is MASK: "keep the current level"
            raise DaliError(f"DAPC level {payload.level} out of range 0-255")
        s, data = 0, payload.level
    elif isinstance(payload, Command):
        s, data = 1, payload.opcode
    else:
        raise DaliError(f"unsupported payload {payload!r}")
    if isinstance(addr, Short):
        a = (addr.address << 1) | s
    elif isinstance(addr, Group):
        a = 0x80 | (addr.group << 1) | s
    elif isinstance(addr, Broadcast):
        a = 0xFE | s
    else:
        raise DaliError(f"cannot encode address {addr!r}")
    return (a << 8) | data


def decode_frame(frame):
    """Inverse of :func:`encode_frame`; total over 16-bit integers."""
    if not 0 <= frame <= 0xFFFF:
        raise DaliError("frame must be a 16-bit integer")
    a, data = frame >> 8, frame & 0xFF
    s = a & 1
    if a & 0x80 == 0:
        addr = Short(a >> 1)
    elif a & 0xE0 == 0x80:
        addr = Group((a >> 1) & 0x0F)
    elif a >> 1 == 0x7F:
        addr = Broadcast()
    else:
        return Special(a), data
    return addr, (Command(data) if s else Dapc(data))


def frame_bytes(frame):
    return bytes([frame >> 8, frame & 0xFF])


def level_to_flux(level):
    """Fraction of full flux for an arc level on the logarithmic DALI curve."""
    if not 0 <= level <= MAX_LEVEL or int(level) != level:
        raise DaliError(f"arc level {level} out of range 0-254")
    if level == 0:
        return 0.0
    return 10.0 ** (3.0 * (level - 1) / 253.0 - 3.0)


# --- gears and bus ---------------------------------------------------------------

@dataclass(frozen=True)
class GearState:
    short: int
    level: int = MAX_LEVEL
    groups: int = 0  # 16-bit membership mask

    def __post_init__(self):
        Short(self.short)
        if not 0 <= self.level <= MAX_LEVEL:
            raise DaliError("gear level out of range")
        if not 0 <= self.groups <= 0xFFFF:
            raise DaliError("group mask must fit 16 bits")

    @property
    def lamp_on(self):
        return self.level > 0

    def addressed_by(self, addr):
        if isinstance(addr, Short):
            return addr.address == self.short
        if isinstance(addr, Group):
            return bool(self.groups >> addr.group & 1)
        return isinstance(addr, Broadcast)


@dataclass(frozen=True)
class BusState:
    gears: tuple = ()

    def attach(self, gear):
        if len(self.gears) >= MAX_GEARS:
            raise DaliError("a DALI bus carries at most 64 gears")
        if any(g.short == gear.short for g in self.gears):
            raise DaliError(f"duplicate short address {gear.short}")
        return BusState(tuple(sorted(self.gears + (gear,), key=lambda g: g.short)))

    def gear(self, short):
        for g in self.gears:
            if g.short == short:
                return g
        raise KeyError(short)

    def levels(self):
        return {g.short: g.level for g in self.gears}


def _apply(g, payload):
    """New gear state and optional reply for one addressed gear."""
    if isinstance(payload, Dapc):
        if payload.level == MASK:
            return g, None
        return replace(g, level=payload.level), None
    op = payload.opcode
    if op == OFF:
        return replace(g, level=0), None
    if op == RECALL_MAX_LEVEL:
        return replace(g, level=MAX_LEVEL), None
    if op == RECALL_MIN_LEVEL:
        return replace(g, level=1), None
    if ADD_TO_GROUP <= op < ADD_TO_GROUP + 16:
        return replace(g, groups=g.groups | (1 << (op - ADD_TO_GROUP))), None
    if REMOVE_FROM_GROUP <= op < REMOVE_FROM_GROUP + 16:
        return replace(g, groups=g.groups & ~(1 << (op - REMOVE_FROM_GROUP))), None
    if op == QUERY_ACTUAL_LEVEL:
        return g, g.level
    if op == QUERY_LAMP_POWER_ON:
        return g, YES if g.lamp_on else None
    if op == QUERY_GROUPS_0_7:
        return g, g.groups & 0xFF
    if op == QUERY_GROUPS_8_15:
        return g, g.groups >> 8
    return g, None


def bus_transact(state, frame):
    """Deliver one forward frame; returns (new state, backward byte or None).

    A backward frame is only produced when exactly one gear answers; replies
    from several gears would collide on the wire and are dropped.
    """
    addr, payload = decode_frame(frame)
    if isinstance(addr, Special):
        return state, None
    new, replies = [], []
    for g in state.gears:
        if g.addressed_by(addr):
            g, reply = _apply(g, payload)
            if reply is not None:
                replies.append(reply)
        new.append(g)
    return BusState(tuple(new)), (replies[0] if len(replies) == 1 else None)


class DaliBus:
    """Serialized bus with a frame log; gear state is owned here."""

    def __init__(self, gears=()):
        self.state = BusState()
        for g in gears:
            self.state = self.state.attach(g)
        self.initial = self.state
        self.log = []  # (seq, frame, reply)
        self._lock = threading.Lock()

    def attach(self, gear):
        with self._lock:
            self.state = self.state.attach(gear)
            self.initial = self.initial.attach(gear)

    def transact(self, frame):
        with self._lock:
            self.state, reply = bus_transact(self.state, frame)
            self.log.append((len(self.log) + 1, frame, reply))
            return reply

    def send(self, addr, payload):
        return self.transact(encode_frame(addr, payload))


def replay(initial, frames):
    state = initial
    for f in frames:
        state, _ = bus_transact(state, f)
    return state


def format_log(log):
    lines = []
    for seq, frame, reply in log:
        line = f"{seq:06d} {frame >> 8:02X} {frame & 0xFF:02X}"
        if reply is not None:
            line += f" {reply:02X}"
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_log(text):
    """Frames from a log written by :func:`format_log`; checks sequence order."""
    frames, last = [], 0
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        seq = int(parts[0])
        if seq <= last:
            raise DaliError(f"frame log sequence not increasing at {seq}")
        last = seq
        frames.append((int(parts[1], 16) << 8) | int(parts[2], 16))
    return frames


# --- TCP gateway ----------------------------------------------------------------------

def parse_address(token):
    t = token.strip().upper()
    if t == "BCAST":
        return Broadcast()
    if t.startswith("G"):
        return Group(int(t[1:]))
    return Short(int(t))


def handle_line(bus, line):
    """Execute one gateway command line against ``bus``; returns the response line."""
    parts = line.split()
    if not parts:
        return "ERR empty command"
    try:
        cmd = parts[0].upper()
        if cmd == "DAPC" and len(parts) == 3:
            bus.send(parse_address(parts[1]), Dapc(int(parts[2])))
            return "OK"
        if cmd == "OFF" and len(parts) == 2:
            bus.send(parse_address(parts[1]), Command(OFF))
            return "OK"
        if cmd == "QUERY" and len(parts) == 2:
            addr = parse_address(parts[1])
            if not isinstance(addr, Short):
                return "ERR QUERY needs a short address"
            reply = bus.send(addr, Command(QUERY_ACTUAL_LEVEL))
            return "ERR no reply" if reply is None else f"LEVEL {reply}"
        return f"ERR bad command {line.strip()!r}"
    except (DaliError, ValueError) as exc:
        return f"ERR {exc}"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("ascii", "replace").strip()
            if not line:
                continue
            resp = self.server.submit(line)
            self.wfile.write((resp + "\n").encode("ascii"))


class Gateway(socketserver.ThreadingTCPServer):
    """Line-oriented TCP front end; commands from all clients run FIFO on one worker."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bus, host="127.0.0.1", port=0):
        super().__init__((host, port), _Handler)
        self.bus = bus
        self._queue = queue.Queue()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()
        self._serve = None

    def _run(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            line, fut = item
            fut.set_result(handle_line(self.bus, line))

    def submit(self, line):
        fut = Future()
        self._queue.put((line, fut))
        return fut.result()

    @property
    def address(self):
        return self.server_address[:2]

    def start(self):
        self._serve = threading.Thread(target=self.serve_forever, daemon=True)
        self._serve.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        self._queue.put(None)


class GatewayClient:
    def __init__(self, host, port, timeout=5.0):
        import socket
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rw", encoding="ascii", newline="\n")

    def request(self, line):
        self._file.write(line.strip() + "\n")
        self._file.flush()
        resp = self._file.readline()
        if not resp:
            raise ConnectionError("gateway closed the connection")
        return resp.strip()

    def dapc(self, addr, level):
        return self.request(f"DAPC {addr} {level}")

    def off(self, addr):
        return self.request(f"OFF {addr}")

    def query(self, short) -> Optional[int]:
        resp = self.request(f"QUERY {short}")
        return int(resp.split()[1]) if resp.startswith("LEVEL") else None

    def close(self):
        self._file.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
