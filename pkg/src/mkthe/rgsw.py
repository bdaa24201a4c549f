"""GSW-form (gadget) encryptions, randomness encryptions, multi-key extension and products.

Row r = 2 * j + c of a fresh ciphertext C encrypting mu is

    gamma * (b[r], a[r]) + t * (e0[r], e1[r]) + mu * 2^j * unit_c

so that s . C[r] = t * e + mu * (s G)[r] with s = (1, -s').  An extended
ciphertext over K keys has K row blocks of 2*beta rows and K column blocks of
two columns; the gadget matrix is block diagonal and never materialised.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .bgv import LevelError, KeysetMismatchError, PublicKey
from .noise import bit_sum_var, external_product_var, own_row_var
from .ring import (
    GadgetOperand,
    Ring,
    RingElement,
    elements,
    powers_of_two_array,
    sample_error,
    sample_gaussian,
)


@dataclass(frozen=True)
class GadgetMatrix:
    """G = (I_k, 2 I_k, ..., 2^(beta-1) I_k)^T, kept implicit."""

    beta: int
    k: int = 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.k * self.beta, self.k)

    def entry(self, row: int, col: int) -> int:
        j, c = divmod(row, self.k)
        return 1 << j if c == col else 0

    def recompose(self, bits: Sequence[RingElement]) -> list[RingElement]:
        """Row vector ``bits`` times G."""
        if len(bits) != self.k * self.beta:
            raise ValueError("length does not match the gadget")
        out = []
        for c in range(self.k):
            acc = bits[c].ring.zero()
            for j in range(self.beta):
                acc = acc + bits[j * self.k + c] * (1 << j)
            out.append(acc)
        return out


@dataclass(frozen=True, eq=False)
class RgswCiphertext:
    """``rows`` is a (2*K*beta) x (2*K) grid of ring elements.

    ``row_noise_var[p]`` estimates the noise of one row in row block p under
    the concatenated key; ``shared_var[p]`` is the variance of noise terms
    that every row of block p shares (from the randomness encryption used to
    extend it).  ``switch`` records whether the rows used the public key's
    switch rows (secret one level down).
    """

    rows: tuple[tuple[RingElement, ...], ...]
    level: int
    keyset: tuple[int, ...]
    owner: int
    switch: bool
    row_noise_var: tuple[float, ...]
    shared_var: tuple[float, ...] = (0.0,)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]))

    @property
    def ring(self) -> Ring:
        return self.rows[0][0].ring

    @property
    def beta(self) -> int:
        return self.ring.beta

    @property
    def blocks(self) -> int:
        return len(self.rows[0]) // 2

    @cached_property
    def operand(self) -> GadgetOperand:
        """Rows permuted to the power-major order of ``bit_decomp_vec``.

        Row p*2*beta + 2*j + c (block-major) multiplies bit j of component
        2*p + c, which bit_decomp_vec places at 2*K*j + 2*p + c.
        """
        K, beta = self.blocks, self.beta
        order = [p * 2 * beta + 2 * j + c for j in range(beta) for p in range(K) for c in range(2)]
        return GadgetOperand([self.rows[r] for r in order])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RgswCiphertext):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.level == other.level
            and self.keyset == other.keyset
            and self.owner == other.owner
            and self.switch == other.switch
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RandomnessEncryption:
    """beta rows (f0, f1) with phase 2^i * gamma + t * e under the owner's key."""

    rows: tuple[tuple[RingElement, RingElement], ...]
    owner: int
    noise_var: float

    @cached_property
    def operand(self) -> GadgetOperand:
        return GadgetOperand(self.rows)


def rgsw_enc(
    pk: PublicKey,
    mu: RingElement,
    rng: np.random.Generator,
    *,
    switch: bool = True,
) -> tuple[RgswCiphertext, RandomnessEncryption]:
    """Encrypt ``mu`` in GSW form and encrypt the randomness gamma used.

    With ``switch`` the rows come from the level's switch rows, so the result
    decrypts under the owner's next-lower secret while living modulo q_level.
    """
    params = pk.params
    level = mu.level
    ring = mu.ring
    pk_rows = pk.gsw_rows(level, switch)
    beta = ring.beta
    if len(pk_rows) != 2 * beta:
        raise ValueError("public key does not carry 2*beta rows")
    t, sd, bd = params.t, params.noise_stddev, params.noise_bound
    q = ring.q
    gamma = sample_error(rng, ring, sd, bd)
    prods = ring.mul_small_many(gamma, [b for b, _ in pk_rows] + [a for _, a in pk_rows])
    g = np.stack([p.coeffs for p in prods]).reshape(2, 2 * beta, ring.eta)
    errs = sample_gaussian(rng, (2, 2 * beta, ring.eta), sd, bd)
    c = (g + t * errs) % q
    pw = powers_of_two_array(mu)
    c[0, 0::2] += pw
    c[1, 1::2] += pw
    c %= q
    rows = tuple(zip(elements(ring, c[0]), elements(ring, c[1])))
    var = own_row_var(params, pk.noise_var, pk.secret_var)
    C = RgswCiphertext(rows, level, (pk.key_id,), pk.key_id, switch, (var,))
    return C, enc_rand(pk, gamma, rng, switch=switch)


def enc_rand(
    pk: PublicKey, gamma: RingElement, rng: np.random.Generator, *, switch: bool = True
) -> RandomnessEncryption:
    """Encrypt Powersof2(gamma) row by row, each row with fresh randomness."""
    params = pk.params
    ring = gamma.ring
    beta = ring.beta
    pk_rows = pk.gsw_rows(gamma.level, switch)[:beta]
    t, sd, bd = params.t, params.noise_stddev, params.noise_bound
    gammas = sample_gaussian(rng, (beta, ring.eta), sd, bd)
    prods = ring.mul_small_each(gammas, [list(row) for row in pk_rows])
    g = np.stack([[p.coeffs for p in pair] for pair in prods]).transpose(1, 0, 2)  # (2, beta, eta)
    errs = sample_gaussian(rng, (2, beta, ring.eta), sd, bd)
    f = (g + t * errs) % ring.q
    f[0] = (f[0] + powers_of_two_array(gamma)) % ring.q
    rows = tuple(zip(elements(ring, f[0]), elements(ring, f[1])))
    return RandomnessEncryption(rows, pk.key_id, own_row_var(params, pk.noise_var, pk.secret_var))


def rgsw_extend(C: RgswCiphertext, F: RandomnessEncryption, pks: Sequence[PublicKey]) -> RgswCiphertext:
    """Extend a fresh GSW ciphertext of party i to the ordered key list ``pks``.

    Row block i holds C in column block i.  Row block p != i holds C in column
    block p and X_p in column block i, where
    X_p[r] = BitDecomp(b_p[r] - b_i[r]) * F_i.  The X_p part contributes
    gamma * (b_p[r] - b_i[r]) and cancels the mismatch between b_i and a * s'_p
    inside C, leaving the fresh-form phase under s_p for that row block.
    """
    if len(C.keyset) != 1:
        raise ValueError("only fresh ciphertexts can be extended")
    ids = [pk.key_id for pk in pks]
    if C.owner not in ids:
        raise KeysetMismatchError(f"key {C.owner} not in {ids}")
    if len(set(ids)) != len(ids):
        raise KeysetMismatchError("duplicate keys")
    K = len(pks)
    if K == 1:
        return C
    i = ids.index(C.owner)
    ring = C.ring
    level = C.level
    params = pks[0].params
    zero = ring.zero()
    rows_i = pks[i].gsw_rows(level, C.switch)
    n = len(C.rows)
    out: list[tuple[RingElement, ...]] = []
    var, shared = [], []
    for p, pk in enumerate(pks):
        if p == i:
            for row in C.rows:
                full = [zero] * (2 * K)
                full[2 * i], full[2 * i + 1] = row
                out.append(tuple(full))
            var.append(C.row_noise_var[0])
            shared.append(0.0)
            continue
        rows_p = pk.gsw_rows(level, C.switch)
        xs = ring.gadget_apply_many([[rows_p[r][0] - rows_i[r][0]] for r in range(n)], F.operand)
        for r in range(n):
            x0, x1 = xs[r]
            full = [zero] * (2 * K)
            full[2 * i], full[2 * i + 1] = x0, x1
            full[2 * p], full[2 * p + 1] = C.rows[r]
            out.append(tuple(full))
        own_p = own_row_var(params, pk.noise_var, pk.secret_var)
        var.append(own_p + bit_sum_var(params.eta, len(F.rows), F.noise_var))
        shared.append(F.noise_var)
    return RgswCiphertext(tuple(out), level, tuple(ids), C.owner, C.switch, tuple(var), tuple(shared))


def external_product(vec: Sequence[RingElement], C: RgswCiphertext) -> list[RingElement]:
    """BitDecomp(vec) * C: a ciphertext row times a GSW ciphertext."""
    if len(vec) * vec[0].ring.beta != len(C.rows):
        raise ValueError(f"vector of length {len(vec)} does not match a {C.shape} ciphertext")
    return vec[0].ring.gadget_apply(vec, C.operand)


def external_products(vecs: Sequence[Sequence[RingElement]], C: RgswCiphertext) -> list[list[RingElement]]:
    if len(vecs[0]) * C.beta != len(C.rows):
        raise ValueError(f"vectors of length {len(vecs[0])} do not match a {C.shape} ciphertext")
    return C.ring.gadget_apply_many(vecs, C.operand)


def rgsw_mult(C1: RgswCiphertext, C2: RgswCiphertext, *, message2_var: float = 1.0) -> RgswCiphertext:
    """Row-wise BitDecomp(C1) * C2; encrypts mu1 * mu2.

    ``message2_var`` is the second moment of mu2's coefficients, which the
    noise estimate needs (1 for bits).
    """
    if C1.shape != C2.shape:
        raise ValueError(f"shape mismatch: {C1.shape} vs {C2.shape}")
    if C1.keyset != C2.keyset or C1.level != C2.level:
        raise KeysetMismatchError("operands must share keyset and level")
    rows = tuple(tuple(r) for r in external_products(C1.rows, C2))
    eta, beta, K = C1.ring.eta, C1.beta, C2.blocks
    live = [2 * beta] * K
    var = tuple(
        external_product_var(eta, live, C2.row_noise_var, C2.shared_var, beta, message2_var, v1)
        for v1 in C1.row_noise_var
    )
    shared = tuple(eta * message2_var * s for s in C1.shared_var)
    return RgswCiphertext(rows, C1.level, C1.keyset, C1.owner, C1.switch, var, shared)


def rgsw_residuals(C: RgswCiphertext, mu: RingElement, secrets: Sequence[RingElement]) -> list[RingElement]:
    """Test oracle: s . C[r] - mu * (s G)[r] for every row r.

    ``secrets`` are the s'_k of the keyset, lifted into C's ring; each residual
    should be t times a small element.
    """
    ring = C.ring
    svec = []
    for s in secrets:
        svec += [ring.one(), -ring.lift(s)]
    beta = ring.beta
    out = []
    for r, row in enumerate(C.rows):
        p, rr = divmod(r, 2 * beta)
        j, c = divmod(rr, 2)
        acc = ring.zero()
        for x, s in zip(row, svec):
            acc = acc + x * s
        out.append(acc - mu * svec[2 * p + c] * (1 << j))
    return out
