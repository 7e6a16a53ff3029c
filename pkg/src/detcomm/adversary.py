"""Eavesdropper models and their analysis.

Every strategy is described by a set of Kraus operators acting on the
photon: intercept-resend with measurement ``{|E_k>}`` and forwarded states
``F_k`` is ``K_k = |F_k><E_k|``; a QND measurement with projector ``P`` is
``{P, I - P}``.  The analytic error rate, the pre-key leakage and the
post-key posterior all derive from those operators.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .scheme import BasisPair, BitValue, SchemeParams, qnd_vulnerability
from .statevec import (
    DIM,
    OrthonormalBasis,
    RandomStream,
    dagger,
    gram_schmidt,
    is_projector,
    make_rng,
    measure,
    project,
    random_orthonormal_basis,
    random_state,
)

CERTAINTY_TOL = 1e-12


class Variant(enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept-resend"
    QND = "qnd"


class ForwardingMode(str, enum.Enum):
    AS_DETECTED = "as-detected"
    RANDOM_FIXED = "random-fixed"


@dataclass(frozen=True, eq=False)
class EveStrategy:
    variant: Variant
    measurement: OrthonormalBasis | None = None
    # columns F_k; None forwards the detected state E_k
    forwarded: np.ndarray | None = None
    projector: np.ndarray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if self.variant is Variant.INTERCEPT_RESEND:
            if self.measurement is None:
                raise ValueError("intercept-resend needs a measurement basis")
            if self.forwarded is not None:
                f = np.array(self.forwarded, dtype=np.complex128)
                if f.shape != (DIM, DIM):
                    raise ValueError("forwarded states must be a 4x4 column matrix")
                if np.max(np.abs(np.linalg.norm(f, axis=0) - 1.0)) > 1e-12:
                    raise ValueError("forwarded states must be normalized")
                f.setflags(write=False)
                object.__setattr__(self, "forwarded", f)
        elif self.variant is Variant.QND:
            if self.projector is None or not is_projector(self.projector):
                raise ValueError("QND strategy needs a Hermitian idempotent projector")

    @classmethod
    def none(cls) -> "EveStrategy":
        return cls(Variant.NONE, label="none")

    @classmethod
    def intercept_resend(
        cls, measurement: OrthonormalBasis, forwarded: np.ndarray | None = None, label: str = ""
    ) -> "EveStrategy":
        return cls(Variant.INTERCEPT_RESEND, measurement=measurement, forwarded=forwarded, label=label)

    @classmethod
    def qnd(cls, projector: np.ndarray, label: str = "qnd") -> "EveStrategy":
        return cls(Variant.QND, projector=np.asarray(projector, dtype=np.complex128), label=label)

    @property
    def forwarding_mode(self) -> ForwardingMode | None:
        if self.variant is not Variant.INTERCEPT_RESEND:
            return None
        return ForwardingMode.AS_DETECTED if self.forwarded is None else ForwardingMode.RANDOM_FIXED

    def forwarded_states(self) -> np.ndarray:
        assert self.measurement is not None
        return self.measurement.matrix if self.forwarded is None else self.forwarded

    def kraus(self) -> np.ndarray:
        """Kraus operators stacked along axis 0."""
        if self.variant is Variant.NONE:
            return np.eye(DIM, dtype=np.complex128)[None]
        if self.variant is Variant.QND:
            p = self.projector
            return np.stack([p, np.eye(DIM) - p])
        e = self.measurement.matrix
        f = self.forwarded_states()
        return np.einsum("ik,jk->kij", f, np.conj(e))


@dataclass(frozen=True)
class EveRecord:
    position: int
    observation: int | bool
    forwarded: tuple[complex, ...]


def eve_intercept(
    psi: np.ndarray, strategy: EveStrategy, rng: RandomStream, position: int = 0
) -> tuple[np.ndarray, EveRecord | None]:
    if strategy.variant is Variant.NONE:
        return psi, None
    if strategy.variant is Variant.QND:
        outcome, collapsed, _ = project(psi, strategy.projector, rng, check=False)
        return collapsed, EveRecord(position, bool(outcome), tuple(complex(x) for x in collapsed))
    k, detected = measure(psi, strategy.measurement, rng)
    out = detected if strategy.forwarded is None else strategy.forwarded[:, k]
    return out, EveRecord(position, int(k), tuple(complex(x) for x in out))


class Eavesdropper:
    """Stateful wrapper that applies a strategy photon by photon and keeps the log."""

    def __init__(self, strategy: EveStrategy, rng: RandomStream):
        self.strategy = strategy
        self.rng = rng
        self.records: list[EveRecord] = []

    def intercept(self, position: int, psi: np.ndarray) -> np.ndarray:
        out, record = eve_intercept(psi, self.strategy, self.rng, position)
        if record is not None:
            self.records.append(record)
        return out


# -- analytic error rate ---------------------------------------------------


def _bob_click_probs(kraus: np.ndarray, bases: BasisPair) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities that Bob finds B_m / C_m after Eve, for each of the 8 signal states."""
    s = bases.signal_states
    v = kraus @ s  # (J, 4, 8)
    qb = (np.abs(dagger(bases.b.matrix) @ v) ** 2).sum(axis=0)
    qc = (np.abs(dagger(bases.c.matrix) @ v) ** 2).sum(axis=0)
    return qb, qc


def analytic_error_rate(strategy: EveStrategy, bases: BasisPair) -> float:
    """Control-bit error probability averaged over Alice's 8 states and Bob's basis choice."""
    if strategy.variant is Variant.NONE:
        return 0.0
    qb, qc = _bob_click_probs(strategy.kraus(), bases)
    n = np.arange(DIM)
    plus = 0.5 * (1.0 - qb[n, n]) + 0.5 * qc[n, n]
    minus = 0.5 * (1.0 - qc[n, DIM + n]) + 0.5 * qb[n, DIM + n]
    return float((plus.sum() + minus.sum()) / (2 * DIM))


def intercept_resend_rate(e: np.ndarray, f: np.ndarray, bases: BasisPair) -> float:
    """Error rate for measurement columns ``e`` and forwarded columns ``f``.

    Same quantity as :func:`analytic_error_rate`, without building a strategy.
    """
    bm, cm = bases.b.matrix, bases.c.matrix
    pb = np.abs(dagger(e) @ bm) ** 2
    pc = np.abs(dagger(e) @ cm) ** 2
    fb = np.abs(dagger(f) @ bm) ** 2
    fc = np.abs(dagger(f) @ cm) ** 2
    g_plus = 0.5 * (1.0 - fb) + 0.5 * fc
    g_minus = 0.5 * (1.0 - fc) + 0.5 * fb
    return float((pb * g_plus + pc * g_minus).sum() / (2 * DIM))


def error_bound(params: SchemeParams) -> float:
    params.validate()
    a1, a2, a3 = params.triple
    return 0.25 * (1.0 - a1**4 - a2**4 - a3**4)


def optimal_strategy(bases: BasisPair) -> EveStrategy:
    return EveStrategy.intercept_resend(bases.b, label="optimal")


def optimal_forwarding(measurement: OrthonormalBasis, bases: BasisPair) -> np.ndarray:
    """Forwarded states minimizing the error rate for a fixed measurement.

    For outcome ``k`` the error is affine in ``|F_k><F_k|``; the minimizer is
    the lowest eigenvector of the corresponding weight operator.
    """
    bm, cm = bases.b.matrix, bases.c.matrix
    pb = np.abs(dagger(measurement.matrix) @ bm) ** 2
    pc = np.abs(dagger(measurement.matrix) @ cm) ** 2
    w = (pc - pb)[:, None, :]  # (k, 1, n)
    weights = (bm[None] * w) @ dagger(bm) - (cm[None] * w) @ dagger(cm)
    _, vecs = np.linalg.eigh(weights)
    return vecs[:, :, 0].T.copy()


def random_strategy(
    rng: RandomStream, forwarding_mode: ForwardingMode = ForwardingMode.AS_DETECTED
) -> EveStrategy:
    basis = random_orthonormal_basis(rng)
    mode = ForwardingMode(forwarding_mode)
    if mode is ForwardingMode.AS_DETECTED:
        return EveStrategy.intercept_resend(basis, label=mode.value)
    fwd = np.column_stack([random_state(rng) for _ in range(DIM)])
    return EveStrategy.intercept_resend(basis, fwd, label=mode.value)


# -- what Eve learns -------------------------------------------------------


def _observation_likelihood(strategy: EveStrategy, psi: np.ndarray, observation: int | bool) -> float:
    if strategy.variant is Variant.QND:
        p_true = float(np.clip(np.real(np.vdot(psi, strategy.projector @ psi)), 0.0, 1.0))
        return p_true if observation else 1.0 - p_true
    e_k = strategy.measurement[int(observation)]
    return abs(np.vdot(e_k, psi)) ** 2


@dataclass
class RecoveryReport:
    recovered_bits: list[BitValue] = field(default_factory=list)
    correct_fraction: float = 0.0
    certain_fraction: float = 0.0
    ties: int = 0

    @property
    def count(self) -> int:
        return len(self.recovered_bits)


def post_key_recover(
    records: list[EveRecord],
    key: list[int],
    bits_truth: list[BitValue],
    bases: BasisPair,
    strategy: EveStrategy,
) -> RecoveryReport:
    """Eve's MAP guess of every bit once the ciphers are public."""
    if strategy.variant is Variant.NONE or not records:
        if records:
            raise ValueError("records present for the NONE strategy")
        return RecoveryReport()
    if not (len(records) == len(key) == len(bits_truth)):
        raise ValueError(
            f"misaligned inputs: {len(records)} records, {len(key)} ciphers, {len(bits_truth)} bits"
        )
    recovered: list[BitValue] = []
    certain = correct = ties = 0
    for rec, cipher, truth in zip(records, key, bits_truth):
        lp = _observation_likelihood(strategy, bases.b[cipher], rec.observation)
        lm = _observation_likelihood(strategy, bases.c[cipher], rec.observation)
        if abs(lp - lm) <= CERTAINTY_TOL:
            guess = BitValue.PLUS
            ties += 1
        else:
            guess = BitValue.PLUS if lp > lm else BitValue.MINUS
        if min(lp, lm) <= CERTAINTY_TOL < max(lp, lm):
            certain += 1
        correct += guess == truth
        recovered.append(guess)
    n = len(recovered)
    return RecoveryReport(recovered, correct / n, certain / n, ties)


def outcome_distributions(strategy: EveStrategy, bases: BasisPair) -> tuple[np.ndarray, np.ndarray]:
    """Eve's observation distribution given bit PLUS and given bit MINUS (cipher unknown)."""
    k = strategy.kraus()
    s = bases.signal_states
    weights = (np.abs(k @ s) ** 2).sum(axis=1)  # (J, 8)
    return weights[:, :DIM].mean(axis=1), weights[:, DIM:].mean(axis=1)


def prekey_leakage(strategy: EveStrategy, bases: BasisPair) -> float:
    """Total-variation distance between Eve's bit-conditioned observation statistics."""
    if strategy.variant is Variant.NONE:
        return 0.0
    p_plus, p_minus = outcome_distributions(strategy, bases)
    return float(0.5 * np.abs(p_plus - p_minus).sum())


# -- falsification probe ---------------------------------------------------


@dataclass
class ProbeResult:
    min_rate: float
    bound: float
    restarts: int
    evaluations: int
    best: EveStrategy

    @property
    def violated(self) -> bool:
        return self.min_rate < self.bound - 1e-9


def _normalize_columns(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=0)


def _coordinate_descent(objective, x: np.ndarray, steps, passes: int = 3) -> tuple[np.ndarray, float, int]:
    best = objective(x)
    evals = 1
    for step in steps:
        for _ in range(passes):
            improved = False
            for i in range(x.size):
                for delta in (step, -step):
                    x[i] += delta
                    val = objective(x)
                    evals += 1
                    if val < best:
                        best, improved = val, True
                        break
                    x[i] -= delta
            if not improved:
                break
    return x, best, evals


def search_bound_violation(
    bases: BasisPair, rng: RandomStream, restarts: int = 200
) -> ProbeResult:
    """Derivative-free hunt for an intercept-resend strategy below the bound.

    Restart 0 is the optimal strategy itself; later restarts perturb its
    measurement basis or draw a Haar-random one.  Forwarded states are tuned
    by coordinate descent and then by the exact per-outcome optimum.  This is
    a falsification probe: it never claims to find the global minimum.
    """
    bound = error_bound(bases.params)
    steps = (0.2, 0.05, 0.01, 2e-3, 4e-4, 1e-4)
    best_rate, best_strategy, evals = np.inf, optimal_strategy(bases), 0
    b0 = bases.b.matrix
    for r in range(restarts):
        if r == 0:
            e = b0
        elif r % 2:
            eps = 10 ** rng.uniform(-3, -0.3)
            noise = rng.standard_normal((DIM, DIM)) + 1j * rng.standard_normal((DIM, DIM))
            e = gram_schmidt(b0 + eps * noise)
            if e is None:
                e = random_orthonormal_basis(rng).matrix
        else:
            e = random_orthonormal_basis(rng).matrix

        def objective(x: np.ndarray, e=e) -> float:
            f = _normalize_columns((x[:16] + 1j * x[16:]).reshape(DIM, DIM))
            return intercept_resend_rate(e, f, bases)

        x0 = np.concatenate([e.real.ravel(), e.imag.ravel()])
        x, rate, n = _coordinate_descent(objective, x0, steps)
        evals += n
        f = _normalize_columns((x[:16] + 1j * x[16:]).reshape(DIM, DIM))
        basis = OrthonormalBasis(e)
        f_exact = optimal_forwarding(basis, bases)
        rate_exact = intercept_resend_rate(e, f_exact, bases)
        evals += 1
        if rate_exact < rate:
            rate, f = rate_exact, f_exact
        if rate < best_rate:
            best_rate = rate
            best_strategy = EveStrategy.intercept_resend(basis, f, label=f"probe-{r}")
    return ProbeResult(float(best_rate), bound, restarts, evals, best_strategy)


def strategy_from_spec(spec: str, bases: BasisPair) -> EveStrategy:
    """``none | optimal | qnd | random:<seed> | random-fixed:<seed>``."""
    spec = spec.strip().lower()
    if spec == "none":
        return EveStrategy.none()
    if spec == "optimal":
        return optimal_strategy(bases)
    if spec == "qnd":
        backdoor = qnd_vulnerability(bases.params)
        if backdoor is None:
            raise ValueError("scheme has no nontrivial QND measurement")
        pattern = "".join(map(str, backdoor.eigenvalue_pattern))
        return EveStrategy.qnd(backdoor.projector, label=f"qnd:{pattern}")
    kind, sep, seed = spec.partition(":")
    if sep and kind in ("random", "random-fixed"):
        try:
            rng = make_rng(int(seed, 0))
        except ValueError:
            raise ValueError(f"bad strategy seed in {spec!r}") from None
        mode = ForwardingMode.AS_DETECTED if kind == "random" else ForwardingMode.RANDOM_FIXED
        return random_strategy(rng, mode)
    raise ValueError(f"unknown eavesdropper spec {spec!r}")
