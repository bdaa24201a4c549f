"""Leveled BGV over the ring chain, with key switching and modulus switching.

A ciphertext is a list of (c0, c1) sub-vectors, one per key in its keyset.
Sub-vector k decrypts against s_k = (1, -s'_k), so the phase of the whole
ciphertext is sum_k (c_k0 - c_k1 * s'_k) = mu + t * e (mod q_l).

Every ciphertext carries ``noise_var``, a heuristic second-moment estimate of
one coefficient of t * e (plus the message).  The tracked bound is
``NOISE_CONFIDENCE`` standard deviations; decryption refuses to run once that
bound reaches q_l / 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .params import RingParams
from .ring import (
    GadgetOperand,
    RingElement,
    powers_of_two_vec,
    rescale,
    sample_binary,
    sample_error,
    sample_uniform,
)


class NoiseOverflowError(ArithmeticError):
    """The tracked noise bound no longer guarantees correct decryption."""


class LevelError(ValueError):
    pass


class KeysetMismatchError(ValueError):
    pass


class PlaintextError(ValueError):
    pass


# -- public parameters and keys ---------------------------------------------


@dataclass(frozen=True)
class PublicParams:
    """Common random elements A_l (2*beta_l of them per level) shared by every key."""

    params: RingParams
    a: tuple[tuple[RingElement, ...], ...]

    def rows(self, level: int) -> int:
        return len(self.a[level])


def setup(params: RingParams, rng: np.random.Generator) -> PublicParams:
    a = []
    for level in range(params.top_level + 1):
        ring = params.ring(level)
        a.append(tuple(sample_uniform(rng, ring) for _ in range(2 * params.beta(level))))
    return PublicParams(params, tuple(a))


@dataclass(frozen=True)
class SecretKey:
    """Per-level secrets s'_l; the decryption vector is s_l = (1, -s'_l)."""

    key_id: int
    params: RingParams
    s_prime: tuple[RingElement, ...]
    secret_var: float

    def vector(self, level: int) -> tuple[RingElement, RingElement]:
        ring = self.params.ring(level)
        return (ring.one(), -self.s_prime[level])

    def at(self, level: int, ring_level: int | None = None) -> RingElement:
        """s'_level embedded in the ring of ``ring_level`` (defaults to the same level)."""
        s = self.s_prime[level]
        if ring_level is None or ring_level == level:
            return s
        return self.params.ring(ring_level).lift(s)


@dataclass(frozen=True)
class PublicKey:
    """RLWE rows (b, a) with b = a * s' + t * e.

    ``rows[l]`` are under s'_l modulo q_l.  ``switch_rows[l]`` (l >= 1) are
    under s'_{l-1} but still modulo q_l; GSW-form encryptions of level-l key
    material under the next key down are built from them.
    """

    key_id: int
    params: RingParams
    rows: tuple[tuple[tuple[RingElement, RingElement], ...], ...]
    switch_rows: tuple[tuple[tuple[RingElement, RingElement], ...] | None, ...]
    noise_var: float
    secret_var: float
    shared_a: bool = True

    def gsw_rows(self, level: int, switch: bool = True) -> tuple[tuple[RingElement, RingElement], ...]:
        if switch:
            rows = self.switch_rows[level]
            if rows is None:
                raise LevelError("no switch rows at level 0")
            return rows
        return self.rows[level]


def public_params_of(pk: PublicKey) -> PublicParams:
    """Recover the common A from any key built over it."""
    return PublicParams(pk.params, tuple(tuple(a for _, a in rows) for rows in pk.rows))


def rlwe_rows(
    params: RingParams,
    a_elems: Sequence[RingElement],
    secret: RingElement,
    rng: np.random.Generator,
) -> tuple[tuple[RingElement, RingElement], ...]:
    """(a * secret + t * e, a) for every a; ``secret`` must be small and in a's ring."""
    ring = a_elems[0].ring
    prods = ring.mul_small_many(secret, a_elems)
    t = params.t
    out = []
    for a, p in zip(a_elems, prods):
        e = sample_error(rng, ring, params.noise_stddev, params.noise_bound)
        out.append((p + e * t, a))
    return tuple(out)


def public_key_from_secret(
    pp: PublicParams,
    sk: SecretKey,
    rng: np.random.Generator,
    *,
    noise_var: float | None = None,
) -> PublicKey:
    params = pp.params
    rows, switch = [], []
    for level in range(params.top_level + 1):
        rows.append(rlwe_rows(params, pp.a[level], sk.s_prime[level], rng))
        if level == 0:
            switch.append(None)
        else:
            s_down = sk.at(level - 1, level)
            switch.append(rlwe_rows(params, pp.a[level], s_down, rng))
    return PublicKey(
        key_id=sk.key_id,
        params=params,
        rows=tuple(rows),
        switch_rows=tuple(switch),
        noise_var=params.chi_var if noise_var is None else noise_var,
        secret_var=sk.secret_var,
    )


def sample_secret(params: RingParams, rng: np.random.Generator, key_id: int) -> SecretKey:
    s = tuple(
        sample_error(rng, params.ring(level), params.noise_stddev, params.noise_bound)
        for level in range(params.top_level + 1)
    )
    return SecretKey(key_id, params, s, params.chi_var)


def kgen(pp: PublicParams, rng: np.random.Generator, key_id: int = 0) -> tuple[SecretKey, PublicKey]:
    sk = sample_secret(pp.params, rng, key_id)
    return sk, public_key_from_secret(pp, sk, rng)


# -- ciphertexts --------------------------------------------------------------


@dataclass(frozen=True)
class LeveledCiphertext:
    subvectors: tuple[tuple[RingElement, RingElement], ...]
    level: int
    keyset: tuple[int, ...]
    params: RingParams
    noise_var: float
    # level of the secrets this decrypts under; differs from ``level`` only
    # right after a bare modulus switch
    key_level: int | None = None

    def __post_init__(self) -> None:
        if len(self.subvectors) != len(self.keyset):
            raise KeysetMismatchError("one sub-vector per key is required")

    @property
    def secret_level(self) -> int:
        return self.level if self.key_level is None else self.key_level

    @property
    def ring(self):
        return self.params.ring(self.level)

    @property
    def parts(self) -> list[RingElement]:
        return [x for sub in self.subvectors for x in sub]

    @property
    def dimension(self) -> tuple[int, int]:
        return (len(self.subvectors), 2)

    @property
    def noise_bound(self) -> float:
        return self.params.noise_bound_from_var(self.noise_var)

    def check_noise(self) -> None:
        q = self.params.moduli[self.level]
        if self.noise_bound >= q / 2:
            raise NoiseOverflowError(
                f"tracked noise 2^{math.log2(self.noise_bound):.1f} exceeds q_{self.level}/2 "
                f"= 2^{math.log2(q / 2):.1f}"
            )


def from_parts(
    parts: Sequence[RingElement],
    level: int,
    keyset: Sequence[int],
    params: RingParams,
    noise_var: float,
) -> LeveledCiphertext:
    subs = tuple((parts[2 * k], parts[2 * k + 1]) for k in range(len(parts) // 2))
    return LeveledCiphertext(subs, level, tuple(keyset), params, noise_var)


def encode(params: RingParams, mu, level: int) -> RingElement:
    """Constant (int) or coefficient-list plaintext as a ring element at ``level``."""
    ring = params.ring(level)
    coeffs = [mu] if isinstance(mu, (int, np.integer)) else list(mu)
    if len(coeffs) > params.eta:
        raise PlaintextError("plaintext has more coefficients than the ring degree")
    if any(not 0 <= int(c) < params.t for c in coeffs):
        raise PlaintextError(f"plaintext coefficients must lie in [0, {params.t})")
    return ring.element([int(c) for c in coeffs] + [0] * (params.eta - len(coeffs)))


def fresh_noise_var(params: RingParams, pk_noise_var: float, pk_secret_var: float) -> float:
    t, eta, chi = params.t, params.eta, params.chi_var
    return t * t * (eta * 0.5 * pk_noise_var + chi + eta * chi * pk_secret_var) + (t - 1) ** 2


def enc(pk: PublicKey, mu, rng: np.random.Generator, level: int | None = None) -> LeveledCiphertext:
    params = pk.params
    level = params.top_level if level is None else level
    ring = params.ring(level)
    m = encode(params, mu, level)
    b, a = pk.rows[level][0]
    r = sample_binary(rng, ring)
    rb, ra = ring.mul_small_many(r, [b, a])
    t = params.t
    e0 = sample_error(rng, ring, params.noise_stddev, params.noise_bound)
    e1 = sample_error(rng, ring, params.noise_stddev, params.noise_bound)
    c0 = rb + e0 * t + m
    c1 = ra + e1 * t
    return LeveledCiphertext(
        ((c0, c1),), level, (pk.key_id,), params, fresh_noise_var(params, pk.noise_var, pk.secret_var)
    )


def phase(c: LeveledCiphertext, secrets: Sequence[RingElement]) -> RingElement:
    """sum_k (c_k0 - c_k1 * s'_k); ``secrets`` are the s'_k lifted into the ciphertext ring."""
    ring = c.ring
    acc = ring.zero()
    for (c0, c1), s in zip(c.subvectors, secrets):
        acc = acc + c0 - c1 * ring.lift(s)
    return acc


def decode(params: RingParams, ph: RingElement) -> list[int]:
    return (ph.centered_array() % params.t).tolist()


def measured_noise(c: LeveledCiphertext, secrets: Sequence[RingElement]) -> int:
    """Infinity norm of the centered phase; a test oracle that needs the secrets."""
    return phase(c, secrets).inf_norm()


def dec(sk: SecretKey, c: LeveledCiphertext) -> list[int]:
    if c.keyset != (sk.key_id,):
        raise KeysetMismatchError(f"ciphertext keyset {c.keyset} is not key {sk.key_id}")
    c.check_noise()
    return decode(c.params, phase(c, [sk.s_prime[c.secret_level]]))


# -- homomorphic operations --------------------------------------------------


def _check_compatible(c1: LeveledCiphertext, c2: LeveledCiphertext) -> None:
    if c1.params != c2.params:
        raise ValueError("ciphertexts use different parameters")
    if c1.level != c2.level or c1.secret_level != c2.secret_level:
        raise LevelError(f"level mismatch: {c1.level} vs {c2.level}")
    if c1.keyset != c2.keyset:
        raise KeysetMismatchError(f"keyset mismatch: {c1.keyset} vs {c2.keyset}")


def _sum_var(v1: float, v2: float) -> float:
    return (math.sqrt(v1) + math.sqrt(v2)) ** 2


def eval_add(c1: LeveledCiphertext, c2: LeveledCiphertext) -> LeveledCiphertext:
    _check_compatible(c1, c2)
    subs = tuple((a0 + b0, a1 + b1) for (a0, a1), (b0, b1) in zip(c1.subvectors, c2.subvectors))
    return LeveledCiphertext(subs, c1.level, c1.keyset, c1.params, _sum_var(c1.noise_var, c2.noise_var), c1.key_level)


def eval_sub(c1: LeveledCiphertext, c2: LeveledCiphertext) -> LeveledCiphertext:
    _check_compatible(c1, c2)
    subs = tuple((a0 - b0, a1 - b1) for (a0, a1), (b0, b1) in zip(c1.subvectors, c2.subvectors))
    return LeveledCiphertext(subs, c1.level, c1.keyset, c1.params, _sum_var(c1.noise_var, c2.noise_var), c1.key_level)


def tensor(c1: LeveledCiphertext, c2: LeveledCiphertext) -> list[RingElement]:
    """Flat tensor product; entry a * n + b is parts1[a] * parts2[b]."""
    _check_compatible(c1, c2)
    p1, p2 = c1.parts, c2.parts
    return [x * y for x in p1 for y in p2]


def tensor_noise_var(c1: LeveledCiphertext, c2: LeveledCiphertext) -> float:
    return 2.0 * c1.params.eta * c1.noise_var * c2.noise_var


def rounding_var(params: RingParams, n_sub: int) -> float:
    """Variance added by rounding during a modulus switch.

    Each component picks up an error of magnitude up to (t+1)/2 that is then
    multiplied by its secret; secrets are assumed no wider than a joint key of
    ``max_owners`` shares.
    """
    half = (params.t + 1) / 2.0
    return half * half * n_sub * (1.0 + params.eta * params.max_owners * params.chi_var)


def mod_switch(c: LeveledCiphertext) -> LeveledCiphertext:
    """Rescale to the next modulus down without changing the key."""
    if c.level == 0:
        raise LevelError("cannot modulus switch below level 0")
    params = c.params
    target = params.ring(c.level - 1)
    parts = [rescale(x, target, params.t) for x in c.parts]
    ratio = params.moduli[c.level - 1] / params.moduli[c.level]
    var = ratio * ratio * c.noise_var + rounding_var(params, len(c.subvectors))
    out = from_parts(parts, c.level - 1, c.keyset, params, var)
    return LeveledCiphertext(out.subvectors, out.level, out.keyset, params, var, c.secret_level)


@dataclass(frozen=True, eq=False)
class KeySwitchKey:
    """Hints turning a ``source_dim``-vector ciphertext into one under ``target_keyset``.

    Hint j (power-major: j = bit * source_dim + comp) is a list of
    2 * len(target_keyset) ring elements whose phase under the target key is
    2^bit * source[comp] + t * e.  Hints live modulo q_level; the switched
    ciphertext is rescaled to ``target_level`` when that is one level lower.
    """

    params: RingParams
    level: int
    target_level: int
    source_dim: int
    target_keyset: tuple[int, ...]
    hints: tuple[tuple[RingElement, ...], ...]
    noise_var: float
    coherent_var: float = 0.0

    @cached_property
    def operand(self) -> GadgetOperand:
        return GadgetOperand(self.hints)

    @property
    def hint_count(self) -> int:
        return len(self.hints)


def evalkgen(
    source: Sequence[RingElement],
    targets: Sequence[SecretKey],
    rng: np.random.Generator,
    *,
    target_level: int,
) -> KeySwitchKey:
    """Key-switching hints for ``source`` (a vector at some level l) under the
    concatenated level-``target_level`` secrets of ``targets``, modulo q_l.

    With several targets only the first sub-vector carries the value; the
    others hold uniform masks.  Any of the secrets can be the real key of a
    party or a test oracle's knowledge of every party's key.
    """
    params = targets[0].params
    ring = source[0].ring
    level = ring.level
    if target_level not in (level, level - 1):
        raise LevelError("a key switch may stay at its level or drop by one")
    secrets = [tk.at(target_level, level) for tk in targets]
    values = powers_of_two_vec(source)
    masks = [[sample_uniform(rng, ring) for _ in values] for _ in secrets]
    prods = [ring.mul_small_many(s, m) for s, m in zip(secrets, masks)]
    t = params.t
    hints = []
    for j, val in enumerate(values):
        h0 = val + sample_error(rng, ring, params.noise_stddev, params.noise_bound) * t
        for p in prods:
            h0 = h0 + p[j]
        row = [h0, masks[0][j]]
        for k in range(1, len(secrets)):
            row += [ring.zero(), masks[k][j]]
        hints.append(tuple(row))
    return KeySwitchKey(
        params=params,
        level=level,
        target_level=target_level,
        source_dim=len(source),
        target_keyset=tuple(tk.key_id for tk in targets),
        hints=tuple(hints),
        noise_var=t * t * params.chi_var,
    )


def keyswitch(
    ksk: KeySwitchKey,
    c_long: LeveledCiphertext | Sequence[RingElement],
    noise_var: float = 0.0,
) -> LeveledCiphertext:
    """sum_j BitDecomp(c_long)[j] * hint_j, then rescale if the key drops a level."""
    params = ksk.params
    if isinstance(c_long, LeveledCiphertext):
        if c_long.secret_level != c_long.level:
            raise LevelError("key switching needs a ciphertext whose key matches its modulus")
        noise_var = c_long.noise_var
        c_long = c_long.parts
    if len(c_long) != ksk.source_dim:
        raise ValueError(f"key expects {ksk.source_dim} components, got {len(c_long)}")
    ring = c_long[0].ring
    if ring.level != ksk.level:
        raise LevelError(f"ciphertext at level {ring.level}, key at level {ksk.level}")
    parts = ring.gadget_apply(c_long, ksk.operand)
    var = noise_var + ksk.hint_count * (params.eta / 2.0) * ksk.noise_var + ksk.coherent_var
    out = from_parts(parts, ksk.level, ksk.target_keyset, params, var)
    if ksk.target_level == ksk.level - 1:
        out = mod_switch(out)
        out = LeveledCiphertext(out.subvectors, out.level, out.keyset, params, out.noise_var)
    return out


def eval_mult(c1: LeveledCiphertext, c2: LeveledCiphertext, ksk: KeySwitchKey) -> LeveledCiphertext:
    """Tensor, key switch back to a linear key, modulus switch."""
    _check_compatible(c1, c2)
    if c1.secret_level != c1.level:
        raise LevelError("multiply needs a ciphertext whose key matches its modulus")
    if c1.level == 0 and ksk.target_level != 0:
        raise LevelError("no levels left to multiply at level 0")
    if ksk.level != c1.level:
        raise LevelError(f"evaluation key for level {ksk.level}, ciphertexts at level {c1.level}")
    if ksk.target_keyset != c1.keyset:
        raise KeysetMismatchError("evaluation key does not target the ciphertext keyset")
    return keyswitch(ksk, tensor(c1, c2), tensor_noise_var(c1, c2))


def tensor_key(vec: Sequence[RingElement]) -> list[RingElement]:
    return [x * y for x in vec for y in vec]


@dataclass(frozen=True, eq=False)
class EvalKeys:
    """Single-key evaluation material: tensor keys and level-drop keys per level."""

    mult: dict[int, KeySwitchKey] = field(default_factory=dict)
    drop: dict[int, KeySwitchKey] = field(default_factory=dict)


def gen_eval_keys(sk: SecretKey, rng: np.random.Generator, levels: Sequence[int] | None = None) -> EvalKeys:
    params = sk.params
    levels = range(params.top_level, 0, -1) if levels is None else levels
    keys = EvalKeys()
    for level in levels:
        vec = sk.vector(level)
        keys.mult[level] = evalkgen(tensor_key(vec), [sk], rng, target_level=level - 1)
        keys.drop[level] = evalkgen(list(vec), [sk], rng, target_level=level - 1)
    return keys


def drop_level(c: LeveledCiphertext, ksk: KeySwitchKey) -> LeveledCiphertext:
    """Move a ciphertext one level down with a linear key from s_l to s_{l-1}."""
    if ksk.source_dim != 2 * len(c.keyset):
        raise ValueError("drop key does not match the ciphertext dimension")
    return keyswitch(ksk, c)


def align_levels(
    c1: LeveledCiphertext, c2: LeveledCiphertext, drop: dict[int, KeySwitchKey]
) -> tuple[LeveledCiphertext, LeveledCiphertext]:
    while c1.level > c2.level:
        c1 = drop_level(c1, drop[c1.level])
    while c2.level > c1.level:
        c2 = drop_level(c2, drop[c2.level])
    return c1, c2
