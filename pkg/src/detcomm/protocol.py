"""Alice and Bob, and an in-process session harness.

Message bytes expand MSB-first into bits, ``1 -> PLUS`` and ``0 -> MINUS``.
Before each message bit Alice keeps inserting control frames while a coin
with bias ``control_fraction`` comes up heads, so the expected share of
control frames in the stream is exactly ``control_fraction``.

Each party draws from its own generator, spawned from the session seed in a
fixed order (Alice, Bob, photon loss, Eve).  Transcripts therefore do not
depend on how the parties are scheduled.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .adversary import Eavesdropper, EveRecord, EveStrategy, error_bound
from .scheme import (
    BasisPair,
    BitValue,
    SchemeParams,
    build_bases,
    probability_table,
)
from .statevec import DIM, RandomStream, make_rng, measure, split

SEED_ENV = "DETCOMM_SEED"


class SessionError(RuntimeError):
    """The session could not complete (transport or peer failure), distinct from ABORT."""


class ConfigError(ValueError):
    pass


class Basis(enum.IntEnum):
    B = 0
    C = 1


class Verdict(enum.IntEnum):
    PASS = 0
    ABORT = 1


@dataclass(frozen=True)
class Frame:
    position: int
    bit: BitValue
    cipher: int
    is_control: bool


@dataclass(frozen=True)
class Outcome:
    position: int
    basis_choice: Basis = Basis.B
    index: int = 0
    lost: bool = False

    @classmethod
    def lost_at(cls, position: int) -> "Outcome":
        return cls(position, Basis.B, 0, True)


@dataclass(frozen=True)
class ErrorReport:
    control_total: int
    control_errors: int
    error_rate: float
    verdict: Verdict


@dataclass
class SessionConfig:
    scheme: SchemeParams
    message: bytes
    control_fraction: float = 0.5
    abort_threshold: float | None = None
    loss_probability: float = 0.0
    seed: int = 0
    eve: str = "none"

    def __post_init__(self) -> None:
        self.scheme.validate()
        if not 0.0 <= self.control_fraction < 1.0:
            raise ConfigError("control_fraction must lie in [0, 1)")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError("loss_probability must lie in [0, 1]")
        if self.abort_threshold is None:
            self.abort_threshold = default_abort_threshold(self.scheme)
        if not 0.0 < self.abort_threshold < 0.5:
            raise ConfigError("abort_threshold must lie in (0, 0.5)")

    def bases(self) -> BasisPair:
        return build_bases(self.scheme)


def default_abort_threshold(params: SchemeParams) -> float:
    return max(0.5 * error_bound(params), 0.01)


@dataclass
class Transcript:
    frames: list[Frame]
    outcomes: list[Outcome]
    eve_records: list[EveRecord]
    error_report: ErrorReport
    announced_key: list[int] | None = None
    decoded_bits: list[BitValue | None] | None = None
    decoded_message: bytes | None = None

    @property
    def message_frames(self) -> list[Frame]:
        return [f for f in self.frames if not f.is_control]

    @property
    def lost_positions(self) -> list[int]:
        return [o.position for o in self.outcomes if o.lost]

    def surviving_bits_match(self) -> bool:
        """Every non-lost message bit decoded to what Alice sent."""
        if self.decoded_bits is None:
            return False
        return all(
            got is None or got == f.bit for got, f in zip(self.decoded_bits, self.message_frames)
        )


# -- bit plumbing ----------------------------------------------------------


def bytes_to_bits(data: bytes) -> list[BitValue]:
    return [BitValue((byte >> (7 - i)) & 1) for byte in data for i in range(8)]


def bits_to_bytes(bits: list[BitValue | int | None]) -> bytes:
    """Pack MSB-first; ``None`` (lost) packs as 0."""
    if len(bits) % 8:
        raise ValueError("bit count must be a multiple of 8")
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for b in bits[i : i + 8]:
            byte = (byte << 1) | int(b or 0)
        out.append(byte)
    return bytes(out)


# -- protocol steps --------------------------------------------------------


def plan_session(config: SessionConfig, rng: RandomStream) -> list[Frame]:
    if not config.message:
        raise ConfigError("message must be non-empty")
    frames: list[Frame] = []
    f = config.control_fraction
    for bit in bytes_to_bits(config.message):
        while f > 0.0 and rng.random() < f:
            ctrl_bit = BitValue.PLUS if rng.random() < 0.5 else BitValue.MINUS
            frames.append(Frame(len(frames), ctrl_bit, int(rng.random() * DIM), True))
        frames.append(Frame(len(frames), bit, int(rng.random() * DIM), False))
    return frames


def encode_frame(frame: Frame, bases: BasisPair) -> np.ndarray:
    return bases.state(frame.bit, frame.cipher)


def bob_measure(psi: np.ndarray, bases: BasisPair, rng: RandomStream, position: int = 0) -> Outcome:
    choice = Basis.B if rng.random() < 0.5 else Basis.C
    k, _ = measure(psi, bases.b if choice is Basis.B else bases.c, rng)
    return Outcome(position, choice, k)


def decode_bit(outcome: Outcome, cipher: int) -> BitValue:
    if outcome.lost:
        raise ValueError(f"cannot decode lost photon at position {outcome.position}")
    hit = outcome.index == cipher
    if outcome.basis_choice is Basis.B:
        return BitValue.PLUS if hit else BitValue.MINUS
    return BitValue.MINUS if hit else BitValue.PLUS


def verify_control(frame: Frame, outcome: Outcome, table: np.ndarray) -> bool:
    """True iff Bob's outcome decodes to the control bit Alice sent.

    With every a_i nonzero this is the same as the outcome having nonzero
    probability in ``table``.  If some a_i vanishes the cross block has extra
    zeros; such outcomes still decode correctly and are not counted as errors,
    which keeps the empirical rate consistent with the analytic error rate.
    """
    if not frame.is_control:
        raise ValueError(f"position {frame.position} is not a control frame")
    if outcome.lost:
        raise ValueError(f"control at position {frame.position} was lost")
    return decode_bit(outcome, frame.cipher) is frame.bit


# -- parties ---------------------------------------------------------------


class Alice:
    def __init__(self, config: SessionConfig, bases: BasisPair, rng: RandomStream):
        self.config = config
        self.bases = bases
        self.table = probability_table(bases)
        self.frames = plan_session(config, rng)
        self.report: ErrorReport | None = None

    def photons(self) -> Iterator[tuple[int, np.ndarray]]:
        for fr in self.frames:
            yield fr.position, encode_frame(fr, self.bases)

    def control_positions(self) -> list[int]:
        return [fr.position for fr in self.frames if fr.is_control]

    def judge(self, outcomes: list[Outcome]) -> ErrorReport:
        controls = [fr for fr in self.frames if fr.is_control]
        if len(outcomes) != len(controls):
            raise SessionError(f"expected {len(controls)} control outcomes, got {len(outcomes)}")
        total = errors = 0
        for fr, out in zip(controls, outcomes):
            if out.lost:
                continue
            total += 1
            errors += not verify_control(fr, out, self.table)
        rate = errors / total if total else 0.0
        verdict = Verdict.ABORT if rate > self.config.abort_threshold else Verdict.PASS
        self.report = ErrorReport(total, errors, rate, verdict)
        return self.report

    def key(self) -> list[int]:
        return [fr.cipher for fr in self.frames]


class Bob:
    def __init__(
        self,
        bases: BasisPair,
        rng: RandomStream,
        loss_probability: float = 0.0,
        loss_rng: RandomStream | None = None,
    ):
        self.bases = bases
        self.rng = rng
        self.loss_probability = loss_probability
        self.loss_rng = loss_rng
        self.outcomes: list[Outcome] = []
        self.control_positions: list[int] = []
        self.verdict: tuple[float, Verdict] | None = None
        self.decoded_bits: list[BitValue | None] | None = None

    def receive(self, position: int, psi: np.ndarray) -> Outcome:
        if position != len(self.outcomes):
            raise SessionError(f"photon {position} out of order (expected {len(self.outcomes)})")
        if self.loss_probability > 0.0 and self.loss_rng.random() < self.loss_probability:
            out = Outcome.lost_at(position)
        else:
            out = bob_measure(psi, self.bases, self.rng, position)
        self.outcomes.append(out)
        return out

    def report(self, control_positions: list[int]) -> list[Outcome]:
        """Disclose outcomes for the control positions only."""
        if any(p >= len(self.outcomes) for p in control_positions):
            raise SessionError("control position beyond received photons")
        self.control_positions = list(control_positions)
        return [self.outcomes[p] for p in control_positions]

    def accept_verdict(self, error_rate: float, verdict: Verdict) -> None:
        self.verdict = (error_rate, verdict)

    def decode(self, key: list[int]) -> list[BitValue | None]:
        if len(key) != len(self.outcomes):
            raise SessionError(f"key length {len(key)} != {len(self.outcomes)} photons")
        ctrl = set(self.control_positions)
        bits: list[BitValue | None] = []
        for out, cipher in zip(self.outcomes, key):
            if out.position in ctrl:
                continue
            bits.append(None if out.lost else decode_bit(out, cipher))
        self.decoded_bits = bits
        return bits


def party_rngs(seed: int) -> tuple[RandomStream, RandomStream, RandomStream, RandomStream]:
    alice, bob, loss, eve = split(make_rng(seed), 4)
    return alice, bob, loss, eve


def assemble_transcript(alice: Alice, bob: Bob, records: list[EveRecord]) -> Transcript:
    report = alice.report
    assert report is not None
    t = Transcript(alice.frames, list(bob.outcomes), list(records), report)
    if report.verdict is Verdict.PASS:
        t.announced_key = alice.key()
        t.decoded_bits = bob.decoded_bits
        if bob.decoded_bits is not None and all(b is not None for b in bob.decoded_bits):
            t.decoded_message = bits_to_bytes(bob.decoded_bits)
    return t


def run_session(config: SessionConfig, eve: EveStrategy | None = None) -> Transcript:
    """Full session with all parties in this thread."""
    eve = eve or EveStrategy.none()
    bases = config.bases()
    r_alice, r_bob, r_loss, r_eve = party_rngs(config.seed)
    alice = Alice(config, bases, r_alice)
    bob = Bob(bases, r_bob, config.loss_probability, r_loss)
    evan = Eavesdropper(eve, r_eve)

    for position, psi in alice.photons():
        bob.receive(position, evan.intercept(position, psi))
    outcomes = bob.report(alice.control_positions())
    report = alice.judge(outcomes)
    bob.accept_verdict(report.error_rate, report.verdict)
    if report.verdict is Verdict.PASS:
        bob.decode(alice.key())
    return assemble_transcript(alice, bob, evan.records)


# -- config files ----------------------------------------------------------

_FLOAT_KEYS = {"a1", "a2", "a3", "control_fraction", "abort_threshold", "loss_probability"}
_KNOWN_KEYS = _FLOAT_KEYS | {"scheme", "message_hex", "seed", "eve"}


def parse_config(text: str, env: dict[str, str] | None = None) -> SessionConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    env = os.environ if env is None else env
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value

    try:
        vals = {k: float(raw[k]) for k in _FLOAT_KEYS if k in raw}
    except ValueError as exc:
        raise ConfigError(f"bad number: {exc}") from None

    scheme_name = raw.get("scheme", "optimal").lower()
    if scheme_name in ("custom", "explicit") or {"a1", "a2", "a3"} & raw.keys():
        try:
            params = SchemeParams(vals["a1"], vals["a2"], vals["a3"])
        except KeyError as exc:
            raise ConfigError(f"explicit scheme needs a1, a2, a3 (missing {exc})") from None
    else:
        params = SchemeParams.from_name(scheme_name)
    if not params.is_valid():
        raise ConfigError("scheme parameters violate a1^2 + a2^2 + a3^2 = 1")

    if "message_hex" not in raw:
        raise ConfigError("message_hex is required")
    try:
        message = bytes.fromhex(raw["message_hex"])
    except ValueError:
        raise ConfigError("message_hex is not valid hex") from None
    if not message:
        raise ConfigError("message must be non-empty")

    seed_text = raw.get("seed", env.get(SEED_ENV, "0"))
    try:
        seed = int(seed_text, 0)
    except ValueError:
        raise ConfigError(f"bad seed {seed_text!r}") from None

    return SessionConfig(
        scheme=params,
        message=message,
        control_fraction=vals.get("control_fraction", 0.5),
        abort_threshold=vals.get("abort_threshold"),
        loss_probability=vals.get("loss_probability", 0.0),
        seed=seed,
        eve=raw.get("eve", "none"),
    )


def load_config(path: str | Path) -> SessionConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def with_seed(config: SessionConfig, seed: int) -> SessionConfig:
    return replace(config, seed=seed)
