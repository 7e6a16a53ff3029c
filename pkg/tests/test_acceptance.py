"""Acceptance gate: eight end-to-end criteria with tolerances and wall-clock limits.

Run under pytest (a summary of PASS/FAIL lines is printed at the end) or
directly with ``python tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest

from detcomm.adversary import (
    ForwardingMode,
    analytic_error_rate,
    error_bound,
    optimal_strategy,
    prekey_leakage,
    random_strategy,
    search_bound_violation,
    strategy_from_spec,
)
from detcomm.analysis import run_attack, sweep_strategies, symbolic_table, uniformity_test
from detcomm.protocol import Outcome, SessionConfig, Verdict, run_session
from detcomm.scheme import (
    OPTIMAL,
    SIMPLE,
    BitValue,
    build_bases,
    concealment_density,
    probability_table,
    qnd_vulnerability,
    random_params,
)
from detcomm.statevec import dagger, make_rng, random_state
from detcomm.transport import (
    FrameType,
    decode_control_positions,
    decode_error_verdict,
    decode_frame,
    decode_key,
    decode_outcome_report,
    decode_photon,
    encode_control_positions,
    encode_error_verdict,
    encode_frame,
    encode_key,
    encode_outcome_report,
    encode_photon,
    run_session_stream,
)

TOL = 1e-12


def _max(m) -> float:
    return float(np.max(np.abs(m)))


def scheme_algebra() -> str:
    rng = make_rng(101)
    params = [OPTIMAL, SIMPLE] + [random_params(rng) for _ in range(100)]
    worst = 0.0
    eye = np.eye(4)
    for p in params:
        bases = build_bases(p)
        a = bases.matrix_a
        devs = [
            _max(a @ dagger(a) - eye),
            _max(a - dagger(a)),
            _max(np.diag(a)),
            max(abs(np.vdot(bases.b[n], bases.c[n])) for n in range(4)),
            _max(bases.b.matrix @ dagger(bases.b.matrix) - eye),
            _max(bases.c.matrix @ dagger(bases.c.matrix) - eye),
            _max(probability_table(bases) - symbolic_table(p)),
        ]
        worst = max(worst, *devs)
    assert worst <= TOL, f"max deviation {worst:.3e}"
    return f"{len(params)} parameter sets, max deviation {worst:.1e}"


def bound_reproduction() -> str:
    out = []
    for p, expected in ((OPTIMAL, 1 / 6), (SIMPLE, 1 / 8)):
        bases = build_bases(p)
        rate = analytic_error_rate(optimal_strategy(bases), bases)
        assert abs(rate - error_bound(p)) <= TOL
        assert abs(rate - expected) <= TOL
        out.append(f"{100 * rate:.2f}%")
    return "optimal attack = bound: " + ", ".join(out)


def strategy_sweep() -> str:
    out = []
    for name, p in (("optimal", OPTIMAL), ("simple", SIMPLE)):
        for mode in ForwardingMode:
            _, summary = sweep_strategies(p, 10_000, mode, seed=2024)
            assert summary.violations == 0, f"{name}/{mode.value}: {summary.violations} violations"
        probe = search_bound_violation(build_bases(p), make_rng(2025), restarts=200)
        assert not probe.violated, f"{name}: probe reached {probe.min_rate!r} < {probe.bound!r}"
        out.append(f"{name} probe min {probe.min_rate:.6f}")
    return "4 x 10^4 strategies, 0 violations; " + ", ".join(out)


def deterministic_protocol() -> str:
    message = bytes(make_rng(4).integers(0, 256, 1024, dtype=np.uint8))
    t = run_session(SessionConfig(OPTIMAL, message, seed=4))
    assert len(t.message_frames) == 8192
    assert t.error_report.control_errors == 0
    assert t.decoded_message == message
    return f"8192 message frames, {t.error_report.control_total} controls, 0 errors"


def attack_end_to_end() -> str:
    cfg = SessionConfig(OPTIMAL, bytes(range(256)) * 14, control_fraction=0.8, seed=5)
    res = run_attack(cfg, optimal_strategy(cfg.bases()))
    rep = res.transcript.error_report
    assert rep.control_total >= 100_000
    sigma = math.sqrt((1 / 6) * (5 / 6) / rep.control_total)
    assert abs(rep.error_rate - 1 / 6) <= 3 * sigma, f"rate {rep.error_rate} vs 1/6 +/- {3 * sigma}"
    assert res.recovery.correct_fraction == 1.0
    return f"{rep.control_total} controls, rate {rep.error_rate:.5f} (1/6 +/- {3 * sigma:.5f}), recovery 1.0"


def qnd_break() -> str:
    cfg = SessionConfig(SIMPLE, bytes(range(256)) * 51, seed=6)
    strategy = strategy_from_spec("qnd", cfg.bases())
    res = run_attack(cfg, strategy)
    rep = res.transcript.error_report
    assert rep.control_total >= 100_000 and res.recovery.count >= 100_000
    assert rep.control_errors == 0
    assert res.recovery.correct_fraction == 1.0
    backdoor = qnd_vulnerability(SIMPLE)
    assert backdoor is not None and backdoor.eigenvalue_pattern == (1, 0, 0, 1)
    rng = make_rng(66)
    tested = 0
    while tested < 1000:
        p = random_params(rng)
        if min(abs(a) for a in p.triple) < 1e-6:
            continue
        assert qnd_vulnerability(p) is None, p
        tested += 1
    return f"{rep.control_total} controls with 0 errors, recovery 1.0 over {res.recovery.count} bits; backdoor (1,0,0,1)"


def concealment() -> str:
    rng = make_rng(7)
    eye = np.eye(4) / 4
    worst_rho = worst_leak = 0.0
    for _ in range(100):
        bases = build_bases(random_params(rng))
        worst_rho = max(worst_rho, *(_max(concealment_density(bases, b) - eye) for b in BitValue))
    bases = build_bases(OPTIMAL)
    for i in range(100):
        s = random_strategy(rng, ForwardingMode.AS_DETECTED if i % 2 else ForwardingMode.RANDOM_FIXED)
        worst_leak = max(worst_leak, prekey_leakage(s, bases))
    assert worst_rho <= TOL and worst_leak <= TOL
    p_values = []
    for i, s in enumerate([optimal_strategy(bases)] + [random_strategy(rng) for _ in range(4)]):
        p_values += uniformity_test(s, OPTIMAL, 100_000, seed=700 + i)
    assert min(p_values) > 1e-3, p_values
    return f"rho dev {worst_rho:.1e}, leakage {worst_leak:.1e}, min chi-square p {min(p_values):.3f}"


def _fuzz_frame(rng) -> tuple[FrameType, object, bytes]:
    kind = FrameType(int(rng.integers(1, 7)))
    if kind is FrameType.PHOTON:
        value = (int(rng.integers(2**32)), random_state(rng))
        payload = encode_photon(*value)
    elif kind is FrameType.CONTROL_POSITIONS:
        value = rng.integers(0, 2**32, int(rng.integers(0, 20))).tolist()
        payload = encode_control_positions(value)
    elif kind is FrameType.OUTCOME_REPORT:
        n = int(rng.integers(0, 20))
        value = [
            Outcome.lost_at(i) if rng.random() < 0.1 else Outcome(i, int(rng.integers(2)), int(rng.integers(4)))
            for i in range(n)
        ]
        payload = encode_outcome_report(value)
    elif kind is FrameType.ERROR_VERDICT:
        value = (float(rng.random()), Verdict(int(rng.integers(2))))
        payload = encode_error_verdict(*value)
    elif kind is FrameType.KEY_ANNOUNCE:
        value = rng.integers(0, 4, int(rng.integers(0, 64))).tolist()
        payload = encode_key(value)
    else:
        value, payload = None, b""
    return kind, value, encode_frame(kind, payload)


def _decoded(kind: FrameType, payload: bytes, value):
    if kind is FrameType.PHOTON:
        pos, psi = decode_photon(payload)
        return pos == value[0] and np.array_equal(psi, value[1])
    if kind is FrameType.CONTROL_POSITIONS:
        return decode_control_positions(payload) == value
    if kind is FrameType.OUTCOME_REPORT:
        return decode_outcome_report(payload, list(range(len(value)))) == value
    if kind is FrameType.ERROR_VERDICT:
        return decode_error_verdict(payload) == value
    if kind is FrameType.KEY_ANNOUNCE:
        return decode_key(payload) == value
    return payload == b""


def transport() -> str:
    rng = make_rng(8)
    mismatches = 0
    for _ in range(100_000):
        kind, value, raw = _fuzz_frame(rng)
        got_kind, payload = decode_frame(raw)
        mismatches += got_kind is not kind or not _decoded(kind, payload, value)
        if kind is not FrameType.PHOTON:
            mismatches += encode_frame(got_kind, payload) != raw
    assert mismatches == 0, f"{mismatches} mismatches"
    sessions = [
        (OPTIMAL, "none"), (SIMPLE, "none"), (OPTIMAL, "optimal"), (SIMPLE, "optimal"), (SIMPLE, "qnd"),
        (OPTIMAL, "random:1"), (SIMPLE, "random:2"), (OPTIMAL, "random-fixed:3"), (SIMPLE, "random-fixed:4"),
        (SIMPLE, "qnd"),
    ]
    for seed, (params, spec) in enumerate(sessions):
        cfg = SessionConfig(params, bytes(range(64)), loss_probability=0.02, seed=seed)
        eve = strategy_from_spec(spec, cfg.bases())
        mem = run_session(cfg, eve)
        wire, _ = run_session_stream(cfg, eve)
        assert wire == mem, f"seed {seed}: stream transcript differs"
    return "10^5 fuzzed frames, 0 mismatches; 10 stream sessions identical"


CRITERIA = [
    (1, "scheme algebra", 1.0, scheme_algebra),
    (2, "bound reproduction", 1.0, bound_reproduction),
    (3, "strategy sweep vs bound", 60.0, strategy_sweep),
    (4, "deterministic protocol", 1.0, deterministic_protocol),
    (5, "optimal attack end-to-end", 30.0, attack_end_to_end),
    (6, "QND break on the simple scheme", 30.0, qnd_break),
    (7, "concealment", 30.0, concealment),
    (8, "transport", 30.0, transport),
]


def evaluate(number: int, name: str, limit: float, check) -> tuple[bool, str]:
    start = time.perf_counter()
    try:
        detail = check()
        ok = True
    except AssertionError as exc:
        detail, ok = f"assertion failed: {exc}", False
    elapsed = time.perf_counter() - start
    if ok and elapsed >= limit:
        ok, detail = False, f"too slow: {elapsed:.2f}s >= {limit:.0f}s; {detail}"
    status = "PASS" if ok else "FAIL"
    return ok, f"criterion {number} [{status}] {name} ({elapsed:.2f}s / {limit:.0f}s): {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("number,name,limit,check", CRITERIA, ids=[f"c{c[0]}" for c in CRITERIA])
def test_criterion(number, name, limit, check, acceptance_log):
    ok, line = evaluate(number, name, limit, check)
    acceptance_log.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
