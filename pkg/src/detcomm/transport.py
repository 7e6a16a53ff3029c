"""Framed little-endian wire format and the byte-stream session harness.

Frame layout::

    0x51 0x43 | version (0x01) | frame_type | payload_len (u32 LE) | payload

Payloads:

    PHOTON            u32 position, 8 x f64 (re, im of amplitudes 1..4)
    CONTROL_POSITIONS u32 count, count x u32 position
    OUTCOME_REPORT    per control position: basis byte (B=0, C=1), index byte, lost byte
    ERROR_VERDICT     f64 error rate, verdict byte (PASS=0, ABORT=1)
    KEY_ANNOUNCE      one cipher byte (0..3) per photon position
    ABORT             empty
"""
from __future__ import annotations

import enum
import socket
import struct
import threading
from dataclasses import dataclass, field
from functools import partial
from typing import BinaryIO, Callable

import numpy as np

from .adversary import Eavesdropper, EveRecord, EveStrategy, Variant
from .protocol import (
    Alice,
    Basis,
    Bob,
    Outcome,
    SessionConfig,
    SessionError,
    Transcript,
    Verdict,
    assemble_transcript,
    party_rngs,
)
from .statevec import DIM, RandomStream

MAGIC = b"\x51\x43"
VERSION = 0x01
HEADER = struct.Struct("<2sBBI")
PHOTON_LAYOUT = struct.Struct("<I8d")
NORM_TOL = 1e-9
_FLUSH_BYTES = 1 << 16


class FrameType(enum.IntEnum):
    PHOTON = 0x01
    CONTROL_POSITIONS = 0x02
    OUTCOME_REPORT = 0x03
    ERROR_VERDICT = 0x04
    KEY_ANNOUNCE = 0x05
    ABORT = 0x06


class WireError(SessionError):
    pass


class BadMagic(WireError):
    pass


class BadVersion(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownType(WireError):
    pass


class DenormalizedState(WireError):
    pass


class MalformedPayload(WireError):
    """Payload length inconsistent with its own contents."""


# -- codec -----------------------------------------------------------------


def encode_frame(frame_type: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, int(frame_type), len(payload)) + payload


def _parse_header(header: bytes) -> tuple[FrameType, int]:
    if len(header) < HEADER.size:
        raise Truncated(f"header needs {HEADER.size} bytes, got {len(header)}")
    magic, version, ftype, length = HEADER.unpack(header[: HEADER.size])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic.hex()}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    try:
        return FrameType(ftype), length
    except ValueError:
        raise UnknownType(f"unknown frame type 0x{ftype:02x}") from None


def _check_payload(ftype: FrameType, payload: bytes) -> None:
    n = len(payload)
    if ftype is FrameType.PHOTON:
        if n < PHOTON_LAYOUT.size:
            raise Truncated(f"photon payload needs {PHOTON_LAYOUT.size} bytes, got {n}")
        if n > PHOTON_LAYOUT.size:
            raise MalformedPayload(f"photon payload has {n - PHOTON_LAYOUT.size} trailing bytes")
        decode_photon(payload)
    elif ftype is FrameType.CONTROL_POSITIONS:
        if n < 4:
            raise Truncated("control-position payload lacks its count")
        (count,) = struct.unpack_from("<I", payload)
        if n < 4 + 4 * count:
            raise Truncated(f"control-position payload announces {count} entries, has {(n - 4) // 4}")
        if n > 4 + 4 * count:
            raise MalformedPayload("control-position payload has trailing bytes")
    elif ftype is FrameType.OUTCOME_REPORT:
        if n % 3:
            raise Truncated("outcome report is not a whole number of 3-byte entries")
        for i in range(0, n, 3):
            if payload[i] > 1 or payload[i + 1] >= DIM or payload[i + 2] > 1:
                raise MalformedPayload(f"bad outcome entry at byte {i}")
    elif ftype is FrameType.ERROR_VERDICT:
        if n < 9:
            raise Truncated(f"verdict payload needs 9 bytes, got {n}")
        if n > 9:
            raise MalformedPayload("verdict payload has trailing bytes")
        if payload[8] > 1:
            raise MalformedPayload(f"bad verdict byte {payload[8]}")
    elif ftype is FrameType.KEY_ANNOUNCE:
        if any(c >= DIM for c in payload):
            raise MalformedPayload("cipher out of range 0..3")
    elif ftype is FrameType.ABORT and n:
        raise MalformedPayload("abort frame carries a payload")


def decode_frame(data: bytes) -> tuple[FrameType, bytes]:
    """Decode exactly one frame occupying all of ``data``."""
    ftype, length = _parse_header(data)
    body = data[HEADER.size :]
    if len(body) < length:
        raise Truncated(f"payload needs {length} bytes, got {len(body)}")
    if len(body) > length:
        raise MalformedPayload(f"{len(body) - length} bytes after frame")
    payload = bytes(body)
    _check_payload(ftype, payload)
    return ftype, payload


def read_frame(stream: BinaryIO) -> tuple[FrameType, bytes, bytes] | None:
    """Next ``(type, payload, raw_bytes)`` from a stream; ``None`` on clean EOF."""
    header = stream.read(HEADER.size)
    if not header:
        return None
    ftype, length = _parse_header(header)
    payload = stream.read(length) if length else b""
    if len(payload) < length:
        raise Truncated(f"stream ended {length - len(payload)} bytes into a payload")
    _check_payload(ftype, payload)
    return ftype, payload, header + payload


# -- typed payloads --------------------------------------------------------


def encode_photon(position: int, psi: np.ndarray) -> bytes:
    flat = np.empty(2 * DIM)
    flat[0::2] = psi.real
    flat[1::2] = psi.imag
    return PHOTON_LAYOUT.pack(position, *flat.tolist())


def decode_photon(payload: bytes) -> tuple[int, np.ndarray]:
    if len(payload) != PHOTON_LAYOUT.size:
        raise Truncated(f"photon payload must be {PHOTON_LAYOUT.size} bytes")
    position, *vals = PHOTON_LAYOUT.unpack(payload)
    arr = np.array(vals)
    psi = arr[0::2] + 1j * arr[1::2]
    if not np.all(np.isfinite(arr)):
        raise DenormalizedState("non-finite amplitude")
    norm2 = float(np.sum(arr * arr))
    if abs(norm2 - 1.0) > NORM_TOL:
        raise DenormalizedState(f"photon norm^2 {norm2!r} deviates from 1")
    return position, psi


def encode_control_positions(positions: list[int]) -> bytes:
    return struct.pack(f"<I{len(positions)}I", len(positions), *positions)


def decode_control_positions(payload: bytes) -> list[int]:
    (count,) = struct.unpack_from("<I", payload)
    return list(struct.unpack_from(f"<{count}I", payload, 4))


def encode_outcome_report(outcomes: list[Outcome]) -> bytes:
    out = bytearray()
    for o in outcomes:
        if o.lost:
            out += bytes((0, 0, 1))
        else:
            out += bytes((int(o.basis_choice), o.index, 0))
    return bytes(out)


def decode_outcome_report(payload: bytes, positions: list[int]) -> list[Outcome]:
    if len(payload) != 3 * len(positions):
        raise MalformedPayload(f"{len(payload) // 3} outcomes for {len(positions)} control positions")
    outs = []
    for pos, i in zip(positions, range(0, len(payload), 3)):
        basis, index, lost = payload[i : i + 3]
        outs.append(Outcome.lost_at(pos) if lost else Outcome(pos, Basis(basis), index))
    return outs


def encode_error_verdict(error_rate: float, verdict: Verdict) -> bytes:
    return struct.pack("<dB", error_rate, int(verdict))


def decode_error_verdict(payload: bytes) -> tuple[float, Verdict]:
    rate, verdict = struct.unpack("<dB", payload)
    return rate, Verdict(verdict)


def encode_key(ciphers: list[int]) -> bytes:
    return bytes(ciphers)


def decode_key(payload: bytes) -> list[int]:
    return list(payload)


# -- eavesdropping proxy ---------------------------------------------------


@dataclass
class ProxyLog:
    classical: list[tuple[str, FrameType, bytes]] = field(default_factory=list)
    control_positions: list[int] | None = None
    key: list[int] | None = None


class EveProxy:
    """Man in the middle: photons go through the strategy, classical frames are copied."""

    def __init__(self, strategy: EveStrategy, rng: RandomStream):
        self.eve = Eavesdropper(strategy, rng)
        self.log = ProxyLog()
        self.pumps: list[Callable[[], None]] = []

    def start(self) -> list[threading.Thread]:
        threads = [threading.Thread(target=p, daemon=True) for p in self.pumps]
        for t in threads:
            t.start()
        return threads

    @property
    def records(self) -> list[EveRecord]:
        return self.eve.records

    def relay(self, ftype: FrameType, payload: bytes, raw: bytes, direction: str) -> bytes:
        if ftype is FrameType.PHOTON:
            if self.eve.strategy.variant is Variant.NONE:
                return raw
            position, psi = decode_photon(payload)
            return encode_frame(ftype, encode_photon(position, self.eve.intercept(position, psi)))
        self.log.classical.append((direction, ftype, raw))
        if ftype is FrameType.CONTROL_POSITIONS:
            self.log.control_positions = decode_control_positions(payload)
        elif ftype is FrameType.KEY_ANNOUNCE:
            self.log.key = decode_key(payload)
        return raw


def _pump(src: BinaryIO, dst: BinaryIO, proxy: EveProxy, direction: str, dst_sock: socket.socket) -> None:
    pending = 0
    try:
        while (frame := read_frame(src)) is not None:
            ftype, payload, raw = frame
            out = proxy.relay(ftype, payload, raw, direction)
            dst.write(out)
            pending += len(out)
            if ftype is not FrameType.PHOTON or pending >= _FLUSH_BYTES:
                dst.flush()
                pending = 0
        dst.flush()
    finally:
        try:
            dst_sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass


def eve_proxy(
    upstream: socket.socket, downstream: socket.socket, strategy: EveStrategy, rng: RandomStream
) -> EveProxy:
    """Attach a proxy between Alice's side (``upstream``) and Bob's side (``downstream``).

    Call :meth:`EveProxy.start` to run it, or run ``proxy.pumps`` yourself.
    """
    proxy = EveProxy(strategy, rng)
    up_r, up_w = upstream.makefile("rb"), upstream.makefile("wb")
    down_r, down_w = downstream.makefile("rb"), downstream.makefile("wb")
    proxy.pumps = [
        partial(_pump, up_r, down_w, proxy, "alice->bob", downstream),
        partial(_pump, down_r, up_w, proxy, "bob->alice", upstream),
    ]
    return proxy


# -- party endpoints -------------------------------------------------------


def _expect(stream: BinaryIO, *types: FrameType) -> tuple[FrameType, bytes]:
    frame = read_frame(stream)
    if frame is None:
        raise SessionError(f"peer closed while waiting for {[t.name for t in types]}")
    ftype, payload, _ = frame
    if ftype not in types:
        raise SessionError(f"unexpected {ftype.name}, wanted {[t.name for t in types]}")
    return ftype, payload


def alice_endpoint(alice: Alice, sock: socket.socket) -> None:
    reader, writer = sock.makefile("rb"), sock.makefile("wb")
    pending = 0
    for position, psi in alice.photons():
        writer.write(encode_frame(FrameType.PHOTON, encode_photon(position, psi)))
        pending += 1
        if pending * 76 >= _FLUSH_BYTES:
            writer.flush()
            pending = 0
    controls = alice.control_positions()
    writer.write(encode_frame(FrameType.CONTROL_POSITIONS, encode_control_positions(controls)))
    writer.flush()

    _, payload = _expect(reader, FrameType.OUTCOME_REPORT)
    report = alice.judge(decode_outcome_report(payload, controls))
    writer.write(encode_frame(FrameType.ERROR_VERDICT, encode_error_verdict(report.error_rate, report.verdict)))
    if report.verdict is Verdict.PASS:
        writer.write(encode_frame(FrameType.KEY_ANNOUNCE, encode_key(alice.key())))
    else:
        writer.write(encode_frame(FrameType.ABORT, b""))
    writer.flush()
    sock.shutdown(socket.SHUT_WR)


def bob_endpoint(bob: Bob, sock: socket.socket) -> None:
    reader, writer = sock.makefile("rb"), sock.makefile("wb")
    while True:
        ftype, payload = _expect(reader, FrameType.PHOTON, FrameType.CONTROL_POSITIONS)
        if ftype is FrameType.CONTROL_POSITIONS:
            break
        position, psi = decode_photon(payload)
        bob.receive(position, psi)
    outcomes = bob.report(decode_control_positions(payload))
    writer.write(encode_frame(FrameType.OUTCOME_REPORT, encode_outcome_report(outcomes)))
    writer.flush()

    _, payload = _expect(reader, FrameType.ERROR_VERDICT)
    bob.accept_verdict(*decode_error_verdict(payload))
    ftype, payload = _expect(reader, FrameType.KEY_ANNOUNCE, FrameType.ABORT)
    if ftype is FrameType.KEY_ANNOUNCE:
        bob.decode(decode_key(payload))
    sock.shutdown(socket.SHUT_WR)


def run_session_stream(
    config: SessionConfig, eve: EveStrategy | None = None, timeout: float = 120.0
) -> tuple[Transcript, EveProxy]:
    """Same session as :func:`protocol.run_session`, with every message on the wire.

    Alice, the proxy and Bob run in separate threads joined by socket pairs.
    """
    eve = eve or EveStrategy.none()
    bases = config.bases()
    r_alice, r_bob, r_loss, r_eve = party_rngs(config.seed)
    alice = Alice(config, bases, r_alice)
    bob = Bob(bases, r_bob, config.loss_probability, r_loss)

    a_sock, up_sock = socket.socketpair()
    down_sock, b_sock = socket.socketpair()
    socks = (a_sock, up_sock, down_sock, b_sock)
    proxy = eve_proxy(up_sock, down_sock, eve, r_eve)
    errors: list[BaseException] = []

    def guarded(fn, *args):
        def run():
            try:
                fn(*args)
            except BaseException as exc:  # surfaced below as SessionError
                errors.append(exc)
                for s in socks:
                    try:
                        s.shutdown(socket.SHUT_RDWR)
                    except OSError:
                        pass
        return threading.Thread(target=run, daemon=True)

    threads = [guarded(alice_endpoint, alice, a_sock), guarded(bob_endpoint, bob, b_sock)]
    threads += [guarded(pump) for pump in proxy.pumps]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout)
            if t.is_alive():
                raise SessionError("session timed out")
    finally:
        for s in socks:
            s.close()
    if errors:
        err = errors[0]
        if isinstance(err, SessionError):
            raise err
        raise SessionError(f"transport failure: {err!r}") from err
    if alice.report is None:
        raise SessionError("session ended without a verdict")
    return assemble_transcript(alice, bob, proxy.records), proxy
