"""Dense linear algebra on the four-dimensional single-photon state space.

States are complex128 arrays of shape ``(4,)`` and operators complex128
arrays of shape ``(4, 4)``.  An :class:`OrthonormalBasis` stores its states
as the *columns* of a unitary matrix, so ``basis.matrix.conj().T @ psi``
gives all four overlaps at once.

Randomness always comes from a :class:`numpy.random.Generator`; callers
split generators with :func:`split` so that independent parties never share
a stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

DIM = 4
UNITARY_TOL = 1e-12
PROB_SUM_TOL = 1e-10
_RETRY_NORM = 1e-8

RandomStream = np.random.Generator


def make_rng(seed: int | None) -> RandomStream:
    """Deterministic generator from a 64-bit seed (``None`` draws OS entropy)."""
    if seed is not None:
        seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
    return np.random.default_rng(seed)


def split(rng: RandomStream, n: int) -> list[RandomStream]:
    return list(rng.spawn(n))


def state(amps: Sequence[complex] | np.ndarray, normalize: bool = True) -> np.ndarray:
    v = np.asarray(amps, dtype=np.complex128).reshape(DIM)
    if not np.all(np.isfinite(v)):
        raise ValueError("state amplitudes must be finite")
    if normalize:
        n = np.linalg.norm(v)
        if n < _RETRY_NORM:
            raise ValueError("cannot normalize a zero vector")
        v = v / n
    return v


def unit(k: int) -> np.ndarray:
    """Computational unit vector ``e_{k+1}`` (0-based ``k``)."""
    v = np.zeros(DIM, dtype=np.complex128)
    v[k] = 1.0
    return v


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """``<a|b>``, conjugate-linear in ``a``."""
    return complex(np.vdot(a, b))


def born_probability(state: np.ndarray, outcome: np.ndarray) -> float:
    p = abs(np.vdot(outcome, state)) ** 2
    return float(min(1.0, max(0.0, p)))


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Phase-insensitive overlap ``|<a|b>|``; 1 means equal up to global phase."""
    return abs(np.vdot(a, b))


def same_ray(a: np.ndarray, b: np.ndarray, tol: float = PROB_SUM_TOL) -> bool:
    return abs(fidelity(a, b) - 1.0) <= tol


def outer(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``|a><b|`` (``|a><a|`` if ``b`` is omitted)."""
    if b is None:
        b = a
    return np.outer(a, np.conj(b))


def dagger(op: np.ndarray) -> np.ndarray:
    return np.conj(op).T


def is_unitary(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.max(np.abs(op @ dagger(op) - np.eye(DIM))) <= tol)


def is_hermitian(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.max(np.abs(op - dagger(op))) <= tol)


def is_projector(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return is_hermitian(op, tol) and bool(np.max(np.abs(op @ op - op)) <= tol)


def _sanitize(probs: list[float]) -> list[float]:
    probs = [min(1.0, max(0.0, p)) for p in probs]
    total = sum(probs)
    if total <= 0.0:
        raise ValueError("outcome probabilities vanish; state not normalized?")
    return [p / total for p in probs]


def _inverse_cdf(probs: list[float], u: float) -> int:
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if u < acc:
            return k
    # u within rounding of 1.0: last outcome with nonzero weight
    return max(k for k, p in enumerate(probs) if p > 0.0)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Four orthonormal states held as the columns of ``matrix``."""

    matrix: np.ndarray
    adjoint: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (DIM, DIM):
            raise ValueError(f"basis matrix must be {DIM}x{DIM}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("basis entries must be finite")
        gram = dagger(m) @ m
        if np.max(np.abs(gram - np.eye(DIM))) > UNITARY_TOL:
            raise ValueError("basis states are not orthonormal")
        m.setflags(write=False)
        adj = dagger(m).copy()
        adj.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "adjoint", adj)

    @classmethod
    def from_states(cls, states: Sequence[np.ndarray]) -> "OrthonormalBasis":
        return cls(np.column_stack([np.asarray(s, dtype=np.complex128) for s in states]))

    @classmethod
    def computational(cls) -> "OrthonormalBasis":
        return cls(np.eye(DIM, dtype=np.complex128))

    @property
    def states(self) -> list[np.ndarray]:
        return [self.matrix[:, k] for k in range(DIM)]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.matrix[:, k]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.states)

    def __len__(self) -> int:
        return DIM

    def probabilities(self, psi: np.ndarray) -> np.ndarray:
        """``|<b_k|psi>|^2`` for all k, clamped to [0, 1]."""
        return np.clip(np.abs(self.adjoint @ psi) ** 2, 0.0, 1.0)

    def projector(self, k: int) -> np.ndarray:
        return outer(self.matrix[:, k])


def measure(psi: np.ndarray, basis: OrthonormalBasis, rng: RandomStream) -> tuple[int, np.ndarray]:
    """Projective measurement; returns the outcome index and the collapsed state."""
    amps = basis.adjoint @ psi
    probs = _sanitize((amps.real * amps.real + amps.imag * amps.imag).tolist())
    k = _inverse_cdf(probs, rng.random())
    return k, basis[k]


def project(
    psi: np.ndarray, projector: np.ndarray, rng: RandomStream, check: bool = True
) -> tuple[bool, np.ndarray, float]:
    """Two-outcome measurement ``{P, I - P}``.

    Returns ``(outcome, collapsed, prob)`` where ``prob`` is the probability
    of the ``True`` branch, ``<psi|P|psi>``.  ``check=False`` skips the
    projector validation for callers that already did it.
    """
    if check and not is_projector(projector):
        raise ValueError("projector must be Hermitian and idempotent")
    p_true = float(np.clip(np.real(np.vdot(psi, projector @ psi)), 0.0, 1.0))
    outcome = rng.random() < p_true
    branch = projector @ psi if outcome else psi - projector @ psi
    norm = np.linalg.norm(branch)
    return outcome, branch / norm, p_true


def _gaussian_matrix(rng: RandomStream) -> np.ndarray:
    return rng.standard_normal((DIM, DIM)) + 1j * rng.standard_normal((DIM, DIM))


def gram_schmidt(columns: np.ndarray) -> np.ndarray | None:
    """Orthonormalize columns in order; ``None`` if any residual norm < 1e-8."""
    out = np.zeros((DIM, DIM), dtype=np.complex128)
    for j in range(DIM):
        v = columns[:, j].astype(np.complex128)
        for i in range(j):
            v = v - np.vdot(out[:, i], v) * out[:, i]
        # second pass keeps orthogonality at the 1e-15 level
        for i in range(j):
            v = v - np.vdot(out[:, i], v) * out[:, i]
        n = np.linalg.norm(v)
        if n < _RETRY_NORM:
            return None
        out[:, j] = v / n
    return out


def random_orthonormal_basis(rng: RandomStream) -> OrthonormalBasis:
    """Haar-random basis: Gram-Schmidt on the columns of a complex Ginibre matrix."""
    while True:
        q = gram_schmidt(_gaussian_matrix(rng))
        if q is not None:
            return OrthonormalBasis(q)


def random_state(rng: RandomStream) -> np.ndarray:
    while True:
        v = rng.standard_normal(DIM) + 1j * rng.standard_normal(DIM)
        n = np.linalg.norm(v)
        if n >= _RETRY_NORM:
            return v / n
