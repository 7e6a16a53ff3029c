import numpy as np
import pytest
from scipy import stats

from detcomm.adversary import EveStrategy, optimal_strategy
from detcomm.protocol import (
    SEED_ENV,
    Alice,
    Basis,
    Bob,
    ConfigError,
    Frame,
    Outcome,
    SessionConfig,
    SessionError,
    Verdict,
    bits_to_bytes,
    bob_measure,
    bytes_to_bits,
    decode_bit,
    default_abort_threshold,
    encode_frame,
    parse_config,
    plan_session,
    run_session,
    verify_control,
)
from detcomm.scheme import OPTIMAL, SIMPLE, BitValue, SchemeParams, build_bases, probability_table, table_row
from detcomm.statevec import make_rng, same_ray


def cfg(message=b"\xa5", **kw):
    return SessionConfig(scheme=kw.pop("scheme", OPTIMAL), message=message, **kw)


def test_bits_msb_first():
    bits = bytes_to_bits(b"\x80\x01")
    assert bits[0] is BitValue.PLUS and all(b is BitValue.MINUS for b in bits[1:15])
    assert bits[15] is BitValue.PLUS
    assert bits_to_bytes(bits) == b"\x80\x01"


def test_no_controls_when_fraction_zero():
    frames = plan_session(cfg(b"\xff", control_fraction=0.0), make_rng(1))
    assert len(frames) == 8
    assert all(f.bit is BitValue.PLUS and not f.is_control for f in frames)
    assert [f.position for f in frames] == list(range(8))


def test_message_bits_preserved_in_order():
    msg = bytes(range(32))
    frames = plan_session(cfg(msg), make_rng(2))
    assert [f.bit for f in frames if not f.is_control] == bytes_to_bits(msg)
    assert [f.position for f in frames] == list(range(len(frames)))


def test_control_count_is_negative_binomial():
    # controls before each message bit are geometric, so for an 8-bit
    # message the total follows NB(8, 1 - f)
    f = 0.5
    rng = make_rng(3)
    counts = np.array([sum(fr.is_control for fr in plan_session(cfg(control_fraction=f), rng)) for _ in range(4000)])
    edges = np.arange(0, 21)
    observed = np.array([np.sum(counts == k) for k in edges[:-1]] + [np.sum(counts >= 20)])
    pmf = stats.nbinom.pmf(edges[:-1], 8, 1 - f)
    expected = np.append(pmf, 1 - pmf.sum()) * len(counts)
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_control_share_matches_fraction():
    frames = plan_session(cfg(bytes(1024), control_fraction=0.3), make_rng(4))
    share = sum(f.is_control for f in frames) / len(frames)
    # share of controls converges to f
    assert abs(share - 0.3) < 0.02


def test_cipher_and_control_bits_uniform():
    frames = plan_session(cfg(bytes(512)), make_rng(5))
    ciphers = np.bincount([f.cipher for f in frames], minlength=4)
    assert stats.chisquare(ciphers).pvalue > 1e-3
    ctrl = [int(f.bit) for f in frames if f.is_control]
    assert stats.binomtest(sum(ctrl), len(ctrl)).pvalue > 1e-3


def test_encode_frame_uses_correct_basis(optimal_bases):
    plus = encode_frame(Frame(0, BitValue.PLUS, 2, False), optimal_bases)
    minus = encode_frame(Frame(1, BitValue.MINUS, 2, False), optimal_bases)
    assert same_ray(plus, optimal_bases.b[2])
    assert same_ray(minus, optimal_bases.c[2])


@pytest.mark.parametrize(
    "basis,index,cipher,expected",
    [
        (Basis.B, 1, 1, BitValue.PLUS),
        (Basis.B, 0, 1, BitValue.MINUS),
        (Basis.C, 3, 3, BitValue.MINUS),
        (Basis.C, 2, 3, BitValue.PLUS),
    ],
)
def test_decode_bit(basis, index, cipher, expected):
    assert decode_bit(Outcome(0, basis, index), cipher) is expected


def test_decode_lost_raises():
    with pytest.raises(ValueError):
        decode_bit(Outcome.lost_at(3), 0)


def test_decode_is_deterministic_without_eve(simple_bases):
    rng = make_rng(6)
    for bit in BitValue:
        for cipher in range(4):
            psi = simple_bases.state(bit, cipher)
            for _ in range(50):
                assert decode_bit(bob_measure(psi, simple_bases, rng), cipher) is bit


def test_bob_measure_statistics(optimal_bases):
    # 3+ sent: B basis gives index 2 always, C basis spreads over C_1, C_2, C_4
    rng = make_rng(7)
    psi = optimal_bases.state(BitValue.PLUS, 2)
    n = 30000
    outs = [bob_measure(psi, optimal_bases, rng) for _ in range(n)]
    n_b = sum(o.basis_choice is Basis.B for o in outs)
    assert stats.binomtest(n_b, n).pvalue > 1e-3
    assert all(o.index == 2 for o in outs if o.basis_choice is Basis.B)
    c_counts = np.bincount([o.index for o in outs if o.basis_choice is Basis.C], minlength=4)
    assert c_counts[2] == 0
    assert stats.chisquare(c_counts[[0, 1, 3]]).pvalue > 1e-3


def test_verify_control(simple_bases):
    table = probability_table(simple_bases)
    fr = Frame(0, BitValue.PLUS, 0, True)
    assert verify_control(fr, Outcome(0, Basis.B, 0), table)
    assert not verify_control(fr, Outcome(0, Basis.B, 1), table)
    assert not verify_control(fr, Outcome(0, Basis.C, 0), table)
    assert verify_control(fr, Outcome(0, Basis.C, 1), table)
    # a3 = 0: C_4 never occurs for 1+, but it still decodes to PLUS
    assert table[0, 7] == 0.0
    assert verify_control(fr, Outcome(0, Basis.C, 3), table)
    with pytest.raises(ValueError):
        verify_control(Frame(0, BitValue.PLUS, 0, False), Outcome(0), table)


def test_verify_control_matches_table_support(random_param_list):
    # with all a_i nonzero, "decodes correctly" and "has nonzero probability" coincide
    for params in [OPTIMAL] + random_param_list[:10]:
        bases = build_bases(params)
        table = probability_table(bases)
        for bit in BitValue:
            for cipher in range(4):
                row = table_row(bit, cipher)
                for basis in Basis:
                    for index in range(4):
                        col = index + 4 * int(basis)
                        ok = verify_control(Frame(0, bit, cipher, True), Outcome(0, basis, index), table)
                        assert ok == (table[row, col] > 1e-12)


def test_default_threshold():
    assert default_abort_threshold(OPTIMAL) == pytest.approx(1 / 12)
    assert default_abort_threshold(SIMPLE) == pytest.approx(1 / 16)
    assert default_abort_threshold(SchemeParams(1.0, 0.0, 0.0)) == 0.01


def test_session_without_eve_decodes_exactly():
    config = cfg(bytes(range(256)), seed=11)
    t = run_session(config)
    assert t.error_report.control_errors == 0
    assert t.error_report.verdict is Verdict.PASS
    assert t.decoded_message == config.message
    assert t.announced_key == [f.cipher for f in t.frames]


def test_session_is_deterministic():
    config = cfg(b"hello", seed=99)
    a, b = run_session(config), run_session(config)
    assert a.frames == b.frames and a.outcomes == b.outcomes
    c = run_session(cfg(b"hello", seed=100))
    assert c.outcomes != a.outcomes


def test_abort_withholds_key():
    t = run_session(cfg(bytes(64), seed=12), optimal_strategy(cfg().bases()))
    assert t.error_report.verdict is Verdict.ABORT
    assert t.announced_key is None and t.decoded_message is None


def test_loss_handling():
    config = cfg(bytes(range(128)), loss_probability=0.1, seed=13)
    t = run_session(config)
    n = len(t.frames)
    lost = len(t.lost_positions)
    assert abs(lost - 0.1 * n) < 4 * np.sqrt(0.09 * n)
    assert t.error_report.control_errors == 0
    assert t.error_report.verdict is Verdict.PASS
    assert t.decoded_message is None
    assert t.surviving_bits_match()
    n_ctrl = sum(f.is_control for f in t.frames)
    lost_ctrl = sum(t.frames[p].is_control for p in t.lost_positions)
    assert t.error_report.control_total == n_ctrl - lost_ctrl


def test_bob_rejects_out_of_order(optimal_bases):
    bob = Bob(optimal_bases, make_rng(0))
    with pytest.raises(SessionError):
        bob.receive(1, optimal_bases.b[0])


def test_alice_rejects_wrong_report_length(optimal_bases):
    alice = Alice(cfg(bytes(4)), optimal_bases, make_rng(0))
    with pytest.raises(SessionError):
        alice.judge([])


def test_parse_config_full():
    text = """
    # test session
    scheme = simple
    message_hex = 48656c6c6f
    control_fraction = 0.25   # quarter
    loss_probability = 0.05
    abort_threshold = 0.1
    seed = 0x2a
    eve = qnd
    """
    c = parse_config(text, env={})
    assert c.scheme == SIMPLE and c.message == b"Hello"
    assert (c.control_fraction, c.loss_probability, c.abort_threshold) == (0.25, 0.05, 0.1)
    assert c.seed == 42 and c.eve == "qnd"


def test_parse_config_explicit_params_and_env_seed():
    c = parse_config("a1 = 0.6\na2 = 0.8\na3 = 0\nmessage_hex = ff", env={SEED_ENV: "7"})
    assert c.scheme.triple == (0.6, 0.8, 0.0)
    assert c.seed == 7
    assert c.abort_threshold == default_abort_threshold(c.scheme)


@pytest.mark.parametrize(
    "text",
    [
        "message_hex = ff\nbogus = 1",
        "scheme = optimal",
        "message_hex = zz",
        "message_hex =",
        "message_hex = ff\nnot a pair",
        "message_hex = ff\na1 = 0.5\na2 = 0.5\na3 = 0.5",
        "message_hex = ff\na1 = 1",
        "message_hex = ff\ncontrol_fraction = 1.0",
        "message_hex = ff\nloss_probability = -0.1",
        "message_hex = ff\nabort_threshold = 0.7",
        "message_hex = ff\nseed = abc",
        "message_hex = ff\ncontrol_fraction = half",
    ],
)
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text, env={})


def test_none_strategy_leaves_states_untouched():
    config = cfg(b"\x0f", seed=3)
    t1 = run_session(config, EveStrategy.none())
    t2 = run_session(config)
    assert t1.outcomes == t2.outcomes
    assert t1.eve_records == []
