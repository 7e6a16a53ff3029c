"""Coding scheme: the B/C basis pair built from a Hermitian, unitary,
zero-diagonal transformation matrix, plus its probability table,
concealment check and QND-backdoor search.

Basis order is ``B_1..B_4 = |Rv>, |Lv>, |Lh>, |Rh>``; these are the
computational unit vectors ``e1..e4`` everywhere in the package, including
the wire format.  Ciphers are 0-based (0..3) internally.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .statevec import (
    DIM,
    UNITARY_TOL,
    OrthonormalBasis,
    RandomStream,
    dagger,
    is_hermitian,
    is_unitary,
    outer,
)

NORM_TOL = 1e-12
SUPPORT_TOL = 1e-12
NEAR_ZERO_ADVISORY = 1e-3


class InvalidParams(ValueError):
    pass


class BitValue(enum.IntEnum):
    MINUS = 0
    PLUS = 1

    @property
    def symbol(self) -> str:
        return "+" if self is BitValue.PLUS else "-"


@dataclass(frozen=True)
class SchemeParams:
    a1: float
    a2: float
    a3: float

    @property
    def triple(self) -> tuple[float, float, float]:
        return (self.a1, self.a2, self.a3)

    def norm_deviation(self) -> float:
        return abs(self.a1**2 + self.a2**2 + self.a3**2 - 1.0)

    def is_valid(self) -> bool:
        return all(math.isfinite(a) for a in self.triple) and self.norm_deviation() <= NORM_TOL

    def validate(self) -> "SchemeParams":
        if not self.is_valid():
            raise InvalidParams(
                f"a1^2 + a2^2 + a3^2 must equal 1 (deviation {self.norm_deviation():.3e})"
            )
        return self

    @classmethod
    def from_name(cls, name: str) -> "SchemeParams":
        try:
            return PRESETS[name.lower()]
        except KeyError:
            raise InvalidParams(f"unknown scheme {name!r}; expected one of {sorted(PRESETS)}") from None

    @classmethod
    def parse(cls, text: str) -> "SchemeParams":
        """Preset name or a comma-separated ``a1,a2,a3`` triple."""
        if "," in text:
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 3:
                raise InvalidParams(f"expected three comma-separated values, got {text!r}")
            return cls(*parts)
        return cls.from_name(text.strip())


OPTIMAL = SchemeParams(1 / math.sqrt(3), 1 / math.sqrt(3), 1 / math.sqrt(3))
SIMPLE = SchemeParams(1 / math.sqrt(2), 1 / math.sqrt(2), 0.0)
PRESETS = {"optimal": OPTIMAL, "simple": SIMPLE}


def random_params(rng: RandomStream) -> SchemeParams:
    """Uniform draw from the unit sphere."""
    while True:
        v = rng.standard_normal(3)
        n = float(np.linalg.norm(v))
        if n > 1e-8:
            v = v / n
            return SchemeParams(float(v[0]), float(v[1]), float(v[2]))


# -- physical labels -------------------------------------------------------

_SPATIAL = {"R": np.array([1.0, 0.0]), "L": np.array([0.0, 1.0])}
_POLARIZATION = {
    "v": np.array([1.0, 0.0]),
    "h": np.array([0.0, 1.0]),
    "s": np.array([1.0, 1.0]) / math.sqrt(2),
    "a": np.array([1.0, -1.0]) / math.sqrt(2),
}
# tensor index 2*spatial + polarization (Rv, Rh, Lv, Lh) -> basis order (Rv, Lv, Lh, Rh)
_TENSOR_TO_BASIS_ORDER = [0, 2, 3, 1]


def ket(label: str) -> np.ndarray:
    """Product state such as ``"Rv"`` or ``"Ls"`` in basis order.

    Spatial mode is ``R`` or ``L``; polarization is ``v``, ``h`` or the
    symmetric/antisymmetric superpositions ``s``, ``a``.
    """
    if len(label) != 2 or label[0] not in _SPATIAL or label[1] not in _POLARIZATION:
        raise ValueError(f"bad product-state label {label!r}")
    tensor = np.kron(_SPATIAL[label[0]], _POLARIZATION[label[1]]).astype(np.complex128)
    return tensor[_TENSOR_TO_BASIS_ORDER]


def spatial_projector(mode: str) -> np.ndarray:
    """Projector onto the fiber ``mode`` (``"R"`` or ``"L"``), any polarization."""
    return outer(ket(mode + "v")) + outer(ket(mode + "h"))


# -- scheme construction ---------------------------------------------------


def build_matrix_a(params: SchemeParams) -> np.ndarray:
    params.validate()
    a1, a2, a3 = params.triple
    m = np.array(
        [
            [0.0, a1, a2, a3],
            [-a1, 0.0, a3, -a2],
            [-a2, -a3, 0.0, a1],
            [-a3, a2, -a1, 0.0],
        ]
    )
    return 1j * m


@dataclass(frozen=True, eq=False)
class BasisPair:
    b: OrthonormalBasis
    c: OrthonormalBasis
    params: SchemeParams

    def state(self, bit: BitValue, cipher: int) -> np.ndarray:
        """Alice's signal state ``|n_bit>`` for 0-based cipher ``n``."""
        return self.b[cipher] if bit == BitValue.PLUS else self.c[cipher]

    @property
    def matrix_a(self) -> np.ndarray:
        return dagger(self.b.matrix) @ self.c.matrix

    @property
    def signal_states(self) -> np.ndarray:
        """All eight signal states as columns: ``1+..4+, 1-..4-``."""
        return np.hstack([self.b.matrix, self.c.matrix])


def build_bases(params: SchemeParams) -> BasisPair:
    a = build_matrix_a(params)
    b = OrthonormalBasis.computational()
    c = OrthonormalBasis(b.matrix @ a)
    return BasisPair(b=b, c=c, params=params)


def bases_for(params: SchemeParams | str) -> BasisPair:
    if isinstance(params, str):
        params = SchemeParams.parse(params)
    return build_bases(params)


def probability_table(bases: BasisPair) -> np.ndarray:
    """8x8 table: rows ``1+..4+, 1-..4-``; columns ``B_1..B_4, C_1..C_4``."""
    s = bases.signal_states
    return np.clip(np.abs(dagger(s) @ s) ** 2, 0.0, 1.0)


def table_row(bit: BitValue, cipher: int) -> int:
    return cipher if bit == BitValue.PLUS else DIM + cipher


def concealment_density(bases: BasisPair, bit: BitValue) -> np.ndarray:
    m = bases.b.matrix if bit == BitValue.PLUS else bases.c.matrix
    return (m @ dagger(m)) / DIM


# -- QND backdoor ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QndBackdoor:
    """Nontrivial projector diagonal in B that leaves every signal state intact."""

    eigenvalue_pattern: tuple[int, int, int, int]
    projector: np.ndarray


def _column_supports(a: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(np.abs(a[:, m]) > SUPPORT_TOL) for m in range(DIM)]


def qnd_vulnerability(params: SchemeParams) -> QndBackdoor | None:
    """Search all 14 nontrivial 0/1 patterns for a QND-compatible projector.

    A pattern qualifies when it is constant on the support of every column
    of A, so each C_m lies inside one eigenspace.  A pattern and its
    complement describe the same measurement; the representative with
    ``pattern[0] == 1`` is reported, lowest binary value first.
    """
    a = build_matrix_a(params)
    supports = _column_supports(a)
    candidates = [p for p in product((0, 1), repeat=DIM) if p[0] == 1 and not all(p)]
    for pattern in candidates:
        lam = np.array(pattern)
        if all(len(set(lam[sup])) <= 1 for sup in supports):
            proj = np.diag(lam.astype(np.complex128))
            return QndBackdoor(eigenvalue_pattern=tuple(int(x) for x in pattern), projector=proj)
    return None


def near_vulnerable(params: SchemeParams) -> bool:
    return any(abs(a) < NEAR_ZERO_ADVISORY for a in params.triple)


def is_valid_pair(bases: BasisPair, tol: float = UNITARY_TOL) -> bool:
    a = bases.matrix_a
    return (
        is_unitary(a, tol)
        and is_hermitian(a, tol)
        and float(np.max(np.abs(np.diag(a)))) <= tol
    )
