"""Arithmetic in the negacyclic ring R_q = Z_q[x]/(x^eta + 1).

Coefficients are stored as int64 numpy arrays with canonical residues in
[0, q), q < 2^62.  Three product paths are used:

* small x big (one operand has centered coefficients below 2^20, e.g. keys,
  noise, binary randomness): an exact float64 matrix product over 31-bit
  limbs of the big operand;
* binary x big, summed over many terms (bit decomposition against gadget
  material): one float64 matrix product over all terms at once;
* big x big: Kronecker substitution on Python integers.

Every float64 intermediate stays below 2^53, so all paths are exact.
"""
from __future__ import annotations

from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

LIMB_BITS = 31
LIMB_MASK = (1 << LIMB_BITS) - 1
SMALL_BOUND = 1 << 20


class LevelMismatchError(ValueError):
    """Operands live in different rings."""


def elements(ring: "Ring", rows: np.ndarray) -> list["RingElement"]:
    """Wrap each row of a canonical (n, eta) int64 array as a ring element."""
    return [RingElement(ring, r) for r in rows]


class Ring:
    """The ring Z_q[x]/(x^eta + 1) at one level of the modulus chain."""

    def __init__(self, eta: int, q: int, level: int = 0):
        if q.bit_length() > 62:
            raise ValueError("modulus must fit in 62 bits")
        self.eta = eta
        self.q = q
        self.level = level

    def __repr__(self) -> str:
        return f"Ring(eta={self.eta}, q={self.q}, level={self.level})"

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Ring)
            and self.eta == other.eta
            and self.q == other.q
            and self.level == other.level
        )

    def __hash__(self) -> int:
        return hash((self.eta, self.q, self.level))

    @property
    def beta(self) -> int:
        """Bit length of q, floor(log2 q) + 1."""
        return self.q.bit_length()

    @cached_property
    def slot_bytes(self) -> int:
        bits = 2 * self.q.bit_length() + self.eta.bit_length() + 1
        return (bits + 7) // 8

    @cached_property
    def _skew(self) -> tuple[np.ndarray, np.ndarray]:
        # negacyclic matrix of v is v[idx] * sign, so that (N @ u)[k] = sum_i v[k-i] u[i]
        k = np.arange(self.eta)[:, None]
        i = np.arange(self.eta)[None, :]
        idx = (k - i) % self.eta
        sign = np.where(k >= i, 1.0, -1.0)
        return idx, sign

    def zero(self) -> "RingElement":
        return RingElement(self, np.zeros(self.eta, dtype=np.int64))

    def one(self) -> "RingElement":
        return self.constant(1)

    def constant(self, value: int) -> "RingElement":
        c = np.zeros(self.eta, dtype=np.int64)
        c[0] = value % self.q
        return RingElement(self, c)

    def monomial(self, degree: int, coeff: int = 1) -> "RingElement":
        k, i = divmod(degree, self.eta)
        c = np.zeros(self.eta, dtype=np.int64)
        c[i] = ((-1) ** k * coeff) % self.q
        return RingElement(self, c)

    def element(self, coeffs: Iterable[int]) -> "RingElement":
        """Build an element from arbitrary integers, reducing mod q."""
        q = self.q
        values = [int(c) % q for c in coeffs]
        if len(values) != self.eta:
            raise ValueError(f"expected {self.eta} coefficients, got {len(values)}")
        return RingElement(self, np.array(values, dtype=np.int64))

    def from_small(self, values: np.ndarray) -> "RingElement":
        """Build from a small signed int64 array (|v| < q)."""
        return RingElement(self, np.mod(values.astype(np.int64), self.q))

    def lift(self, x: "RingElement") -> "RingElement":
        """Re-embed a small element of another ring via its centered representative."""
        if x.ring.eta != self.eta:
            raise LevelMismatchError("ring degree differs")
        return self.from_small(x.centered_array())

    # -- exact float64 products ------------------------------------------------

    def _combine(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """(lo + hi * 2^31) mod q, elementwise, for |lo|, |hi| < 2^53."""
        q = self.q
        return (np.mod(lo, q) + mulmod(np.mod(hi, q), (1 << LIMB_BITS) % q, q)) % q

    def negacyclic_matrix(self, small: "RingElement") -> np.ndarray:
        idx, sign = self._skew
        return small.centered_array().astype(np.float64)[idx] * sign

    def mul_small_many(self, small: "RingElement", ys: Sequence["RingElement"]) -> list["RingElement"]:
        """small * y for every y, where small has coefficients below 2^20 in magnitude."""
        if not ys:
            return []
        mat = self.negacyclic_matrix(small)
        limbs = np.concatenate([y.limbs for y in ys])  # (2M, eta)
        prod = np.rint(limbs @ mat.T).astype(np.int64)
        out = self._combine(prod[0::2], prod[1::2])
        return [RingElement(self, row) for row in out]

    def gadget_apply(self, xs: Sequence["RingElement"], operand: "GadgetOperand") -> list["RingElement"]:
        """Row vector BitDecomp(xs) times the gadget-indexed matrix ``operand``.

        Bits are ordered power-major, index = bit * len(xs) + comp, matching the
        row order of the gadget matrix G = (I, 2I, 4I, ...)^T.
        """
        return self.gadget_apply_many([xs], operand)[0]

    def gadget_apply_many(
        self, vectors: Sequence[Sequence["RingElement"]], operand: "GadgetOperand"
    ) -> list[list["RingElement"]]:
        """:meth:`gadget_apply` for several input vectors against one operand."""
        eta, beta = self.eta, self.beta
        k = len(vectors[0])
        if operand.rows != beta * k:
            raise ValueError(f"gadget operand has {operand.rows} rows, expected {beta * k}")
        m = len(vectors)
        x = np.stack([np.stack([e.coeffs for e in v]) for v in vectors])  # (m, k, eta)
        shifts = np.arange(beta, dtype=np.int64)[None, :, None, None]
        bits = ((x[:, None, :, :] >> shifts) & 1).reshape(m, beta * k, eta)
        bits = bits.transpose(0, 2, 1).reshape(m * eta, beta * k).astype(np.float64)
        cols2 = operand.cols * 2
        # P[v, i, c, j] = sum_r bit_r(v)[i] * limb_c(op_r)[j]
        prod = (bits @ operand.array).reshape(m, eta, cols2, eta)
        full = np.zeros((m, cols2, 2 * eta))
        for i in range(eta):
            full[:, :, i : i + eta] += prod[:, i]
        folded = np.rint(full[:, :, :eta] - full[:, :, eta:]).astype(np.int64)
        out = self._combine(folded[:, 0::2], folded[:, 1::2])  # (m, cols, eta)
        return [[RingElement(self, row) for row in block] for block in out]

    def mul_small_each(self, smalls: np.ndarray, ys: Sequence[Sequence["RingElement"]]) -> list[list["RingElement"]]:
        """smalls[n] * y for every y in ys[n]; smalls is an (n, eta) signed array below 2^20."""
        idx, sign = self._skew
        mats = smalls.astype(np.float64)[:, idx] * sign  # (n, eta, eta)
        limbs = np.stack([np.concatenate([y.limbs for y in row]) for row in ys])  # (n, 2c, eta)
        prod = np.rint(limbs @ mats.transpose(0, 2, 1)).astype(np.int64)
        out = self._combine(prod[:, 0::2], prod[:, 1::2])
        return [[RingElement(self, r) for r in block] for block in out]

    def gadget_dot(self, xs: Sequence["RingElement"], ys: Sequence["RingElement"]) -> "RingElement":
        """<BitDecomp(xs), ys> for a plain list ys of length beta * len(xs)."""
        return self.gadget_apply(xs, GadgetOperand([[y] for y in ys]))[0]


def mulmod(a: np.ndarray, b: int, q: int) -> np.ndarray:
    """a * b mod q for int64 arrays a in [0, q) and 0 <= b < q < 2^62.

    The quotient is estimated in extended precision and the remainder is
    recovered exactly with wrapping 64-bit arithmetic.
    """
    au = a.astype(np.uint64)
    quot = np.floor(a.astype(np.longdouble) * np.longdouble(b) / np.longdouble(q)).astype(np.uint64)
    with np.errstate(over="ignore"):
        r = (au * np.uint64(b) - quot * np.uint64(q)).view(np.int64)
    r = np.where(r < 0, r + q, r)
    return np.where(r >= q, r - q, r)


class GadgetOperand:
    """A rows x cols grid of ring elements laid out for :meth:`Ring.gadget_apply`."""

    def __init__(self, grid: Sequence[Sequence["RingElement"]]):
        self.rows = len(grid)
        self.cols = len(grid[0])
        blocks = np.stack([np.concatenate([y.limbs for y in row]) for row in grid])
        self.array = blocks.reshape(self.rows, -1)


def _pack(coeffs: Sequence[int], slot_bytes: int) -> int:
    return int.from_bytes(b"".join(c.to_bytes(slot_bytes, "little") for c in coeffs), "little")


def _unpack(packed: int, count: int, slot_bytes: int) -> list[int]:
    raw = packed.to_bytes(count * slot_bytes, "little")
    fb = int.from_bytes
    return [fb(raw[i : i + slot_bytes], "little") for i in range(0, count * slot_bytes, slot_bytes)]


class RingElement:
    """Immutable polynomial with canonical coefficients in [0, q)."""

    __slots__ = ("ring", "coeffs", "_packed", "_limbs", "_small")

    def __init__(self, ring: Ring, coeffs: np.ndarray):
        coeffs.flags.writeable = False
        self.ring = ring
        self.coeffs = coeffs
        self._packed: int | None = None
        self._limbs: np.ndarray | None = None
        self._small: bool | None = None

    @property
    def level(self) -> int:
        return self.ring.level

    @property
    def packed(self) -> int:
        if self._packed is None:
            self._packed = _pack(self.coeffs.tolist(), self.ring.slot_bytes)
        return self._packed

    @property
    def limbs(self) -> np.ndarray:
        """(2, eta) float64 array of the low and high 31-bit limbs."""
        if self._limbs is None:
            c = self.coeffs
            self._limbs = np.stack([c & LIMB_MASK, c >> LIMB_BITS]).astype(np.float64)
        return self._limbs

    def __repr__(self) -> str:
        return f"RingElement(level={self.ring.level}, coeffs={self.coeffs.tolist()})"

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RingElement)
            and self.ring == other.ring
            and bool(np.array_equal(self.coeffs, other.coeffs))
        )

    def __hash__(self) -> int:
        return hash((self.ring, self.coeffs.tobytes()))

    def _check(self, other: "RingElement") -> None:
        if self.ring != other.ring:
            raise LevelMismatchError(f"{self.ring} vs {other.ring}")

    def is_zero(self) -> bool:
        return not self.coeffs.any()

    def is_small(self) -> bool:
        if self._small is None:
            self._small = bool(np.abs(self.centered_array()).max(initial=0) < SMALL_BOUND)
        return self._small

    def __add__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        return RingElement(self.ring, (self.coeffs + other.coeffs) % self.ring.q)

    def __sub__(self, other: "RingElement") -> "RingElement":
        self._check(other)
        return RingElement(self.ring, (self.coeffs - other.coeffs) % self.ring.q)

    def __neg__(self) -> "RingElement":
        return RingElement(self.ring, (-self.coeffs) % self.ring.q)

    def __mul__(self, other: "RingElement | int") -> "RingElement":
        ring = self.ring
        if isinstance(other, (int, np.integer)):
            q = ring.q
            return RingElement(ring, mulmod(self.coeffs, int(other) % q, q))
        self._check(other)
        if other.is_small():
            return ring.mul_small_many(other, [self])[0]
        if self.is_small():
            return ring.mul_small_many(self, [other])[0]
        eta, q = ring.eta, ring.q
        slots = _unpack(self.packed * other.packed, 2 * eta, ring.slot_bytes)
        return RingElement(ring, np.array([(a - b) % q for a, b in zip(slots[:eta], slots[eta:])], dtype=np.int64))

    __rmul__ = __mul__

    def centered_array(self) -> np.ndarray:
        """Coefficients mapped into [-q/2, q/2) as int64."""
        q = self.ring.q
        c = self.coeffs
        return np.where(2 * c >= q, c - q, c)

    def centered(self) -> list[int]:
        return self.centered_array().tolist()

    def inf_norm(self) -> int:
        return int(np.abs(self.centered_array()).max(initial=0))


def ring_add(x: RingElement, y: RingElement) -> RingElement:
    return x + y


def ring_mul(x: RingElement, y: RingElement) -> RingElement:
    return x * y


# -- sampling ---------------------------------------------------------------


def sample_uniform(rng: np.random.Generator, ring: Ring) -> RingElement:
    return RingElement(ring, rng.integers(0, ring.q, size=ring.eta, dtype=np.int64))


def sample_binary(rng: np.random.Generator, ring: Ring) -> RingElement:
    return RingElement(ring, rng.integers(0, 2, size=ring.eta, dtype=np.int64))


def sample_gaussian(rng: np.random.Generator, size: int | tuple, stddev: float, bound: int) -> np.ndarray:
    """Rounded Gaussian draws, rejected and redrawn outside [-bound, bound]."""
    if bound <= 0 or stddev <= 0:
        return np.zeros(size, dtype=np.int64)
    out = np.rint(rng.normal(0.0, stddev, size)).astype(np.int64)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = np.rint(rng.normal(0.0, stddev, int(bad.sum()))).astype(np.int64)
        bad = np.abs(out) > bound
    return out


def sample_error(rng: np.random.Generator, ring: Ring, stddev: float, bound: int) -> RingElement:
    return ring.from_small(sample_gaussian(rng, ring.eta, stddev, bound))


def sample_bounded(rng: np.random.Generator, ring: Ring, bound: int) -> RingElement:
    """Uniform coefficients in [-bound, bound]."""
    if bound <= 0:
        return ring.zero()
    return ring.from_small(rng.integers(-bound, bound + 1, size=ring.eta, dtype=np.int64))


# -- gadget operations --------------------------------------------------------


def bit_decomp(x: RingElement) -> list[RingElement]:
    ring = x.ring
    return [RingElement(ring, (x.coeffs >> b) & 1) for b in range(ring.beta)]


def powers_of_two(x: RingElement) -> list[RingElement]:
    return [RingElement(x.ring, row) for row in powers_of_two_array(x)]


def powers_of_two_array(x: RingElement) -> np.ndarray:
    """(beta, eta) array whose row i is 2^i * x mod q."""
    ring = x.ring
    out = np.empty((ring.beta, ring.eta), dtype=np.int64)
    out[0] = x.coeffs
    for i in range(1, ring.beta):
        r = out[i - 1] << 1
        out[i] = np.where(r >= ring.q, r - ring.q, r)
    return out


def bit_decomp_vec(xs: Sequence[RingElement]) -> list[RingElement]:
    """Power-major decomposition of a vector: entry bit * len(xs) + comp."""
    planes = [bit_decomp(x) for x in xs]
    return [planes[c][b] for b in range(xs[0].ring.beta) for c in range(len(xs))]


def powers_of_two_vec(xs: Sequence[RingElement]) -> list[RingElement]:
    planes = [powers_of_two(x) for x in xs]
    return [planes[c][b] for b in range(xs[0].ring.beta) for c in range(len(xs))]


def rescale(x: RingElement, target: Ring, t: int) -> RingElement:
    """Scale x from its modulus q to ``target.q`` keeping each coefficient's residue mod t.

    The plaintext survives unscaled only when q == target.q (mod t); the
    parameter presets pick every prime == 1 (mod t).
    """
    q, q2 = x.ring.q, target.q
    if target.eta != x.ring.eta:
        raise LevelMismatchError("ring degree differs")
    out = []
    for c in x.coeffs.tolist():
        y = (2 * q2 * c + q) // (2 * q)
        d = (c - y) % t
        if 2 * d > t:
            d -= t
        out.append((y + d) % q2)
    return RingElement(target, np.array(out, dtype=np.int64))
