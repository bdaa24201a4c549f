"""Ring parameters, modulus chains and named presets.

Presets are toy/demo sized and NOT secure.  Extra presets can be dropped into
any directory listed in ``MKTHE_PRESET_PATH`` as ``<name>.preset`` files of
``key=value`` lines (see :func:`load_preset_file`).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from sympy import isprime

from .ring import Ring

# tracked noise bounds are this many estimated standard deviations
NOISE_CONFIDENCE = 8.0


class ParameterError(ValueError):
    pass


@lru_cache(maxsize=None)
def prime_chain(eta: int, t: int, bits: tuple[int, ...]) -> tuple[int, ...]:
    """Largest primes below 2^b (one per entry of ``bits``) with p == 1 mod lcm(2*eta, t).

    p == 1 (mod 2*eta) keeps a number-theoretic transform available; p == 1
    (mod t) makes modulus switching preserve plaintexts without a correction
    factor.
    """
    step = math.lcm(2 * eta, t)
    out = []
    for b in bits:
        p = ((1 << b) - 1) // step * step + 1
        while p >= (1 << b) or not isprime(p) or p == t or p in out:
            p -= step
        out.append(p)
    return tuple(out)


@dataclass(frozen=True)
class RingParams:
    """Parameters of the leveled scheme.

    ``moduli[l]`` is q_l; level L = len(moduli) - 1 is the top of the chain.
    """

    eta: int
    moduli: tuple[int, ...]
    t: int
    noise_stddev: float = 3.2
    noise_bound: int = 19
    smudging_bound: int = 0
    growth_budget: int = 1 << 16
    max_owners: int = 8

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        eta, q, t = self.eta, self.moduli, self.t
        if eta < 4 or eta & (eta - 1):
            raise ParameterError("eta must be a power of two and at least 4")
        if t < 2:
            raise ParameterError("plaintext modulus t must be at least 2")
        if len(q) < 1:
            raise ParameterError("need at least one modulus")
        if any(a >= b for a, b in zip(q, q[1:])):
            raise ParameterError("moduli must be strictly increasing with the level")
        for ql in q:
            if ql % 2 == 0:
                raise ParameterError("moduli must be odd")
            if math.gcd(ql, t) != 1:
                raise ParameterError(f"t={t} is not coprime with q={ql}")
            if ql.bit_length() > 62:
                raise ParameterError("moduli must fit in 62 bits")
        if self.noise_bound < 0 or self.noise_stddev < 0:
            raise ParameterError("noise parameters must be non-negative")
        if self.noise_bound * t * self.growth_budget >= q[0] // 2:
            raise ParameterError("noise bound too large for the smallest modulus")
        if t * self.max_owners * self.smudging_bound >= q[0] // 4:
            raise ParameterError("smudging noise would overflow the smallest modulus")

    @property
    def top_level(self) -> int:
        return len(self.moduli) - 1

    def beta(self, level: int) -> int:
        return self.moduli[level].bit_length()

    def ring(self, level: int) -> Ring:
        return _ring(self.eta, self.moduli[level], level)

    @property
    def chi_var(self) -> float:
        """Second moment of one error coefficient (rounded, truncated Gaussian)."""
        return min(self.noise_stddev ** 2 + 1.0 / 12.0, float(self.noise_bound) ** 2)

    def noise_bound_from_var(self, var: float) -> float:
        return NOISE_CONFIDENCE * math.sqrt(var)


@lru_cache(maxsize=None)
def _ring(eta: int, q: int, level: int) -> Ring:
    return Ring(eta, q, level)


@dataclass(frozen=True)
class ParameterPreset:
    name: str
    params: RingParams
    use: str  # "stump" or "tally"
    insecure: bool = True
    family: str = ""
    description: str = ""


DEFAULT_BITS = (32, 42, 46, 62)


def make_preset(
    name: str,
    *,
    eta: int,
    t: int,
    bits: tuple[int, ...] = DEFAULT_BITS,
    use: str,
    family: str,
    noise_stddev: float = 3.2,
    noise_bound: int = 19,
    smudging_bound: int | None = None,
    max_owners: int = 8,
) -> ParameterPreset:
    params = RingParams(
        eta=eta,
        moduli=prime_chain(eta, t, tuple(bits)),
        t=t,
        noise_stddev=noise_stddev,
        noise_bound=noise_bound,
        smudging_bound=t * (1 << 20) if smudging_bound is None else smudging_bound,
        max_owners=max_owners,
    )
    return ParameterPreset(name=name, params=params, use=use, insecure=True, family=family)


def _builtin() -> dict[str, ParameterPreset]:
    out = {}
    for fam, eta in (("toy", 16), ("toy64", 64)):
        out[fam] = make_preset(fam, eta=eta, t=2, use="stump", family=fam)
        out[f"{fam}-tally"] = make_preset(f"{fam}-tally", eta=eta, t=7, use="tally", family=fam)
    return out


BUILTIN_PRESETS = _builtin()


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"malformed line: {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_preset_file(path: str | os.PathLike) -> ParameterPreset:
    """Load a preset from key=value lines.

    Recognised keys: name, eta, t, bits (comma separated, level 0 first),
    use, family, noise_stddev, noise_bound, smudging_bound, max_owners.
    """
    kv = parse_key_values(Path(path).read_text())
    try:
        name = kv.get("name", Path(path).stem)
        return make_preset(
            name,
            eta=int(kv["eta"]),
            t=int(kv["t"]),
            bits=tuple(int(b) for b in kv.get("bits", ",".join(map(str, DEFAULT_BITS))).split(",")),
            use=kv.get("use", "tally" if int(kv["t"]) > 2 else "stump"),
            family=kv.get("family", name),
            noise_stddev=float(kv.get("noise_stddev", 3.2)),
            noise_bound=int(kv.get("noise_bound", 19)),
            smudging_bound=int(kv["smudging_bound"]) if "smudging_bound" in kv else None,
            max_owners=int(kv.get("max_owners", 8)),
        )
    except KeyError as exc:
        raise ParameterError(f"{path}: missing key {exc}") from None
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from None


def available_presets() -> dict[str, ParameterPreset]:
    presets = dict(BUILTIN_PRESETS)
    for d in filter(None, os.environ.get("MKTHE_PRESET_PATH", "").split(os.pathsep)):
        for f in sorted(Path(d).glob("*.preset")):
            p = load_preset_file(f)
            presets[p.name] = p
    return presets


def get_preset(name: str) -> ParameterPreset:
    presets = available_presets()
    if name not in presets:
        raise ParameterError(f"unknown preset {name!r}; known: {', '.join(sorted(presets))}")
    return presets[name]


def preset_for_owners(name: str, n_owners: int) -> ParameterPreset:
    """Pick the member of a preset family whose plaintext modulus can hold a tally of n votes.

    A single owner needs only t = 2; larger forests need t > n.
    """
    base = get_preset(name)
    if base.params.t > n_owners:
        return base
    fam = base.family or base.name
    for p in available_presets().values():
        if (p.family or p.name) == fam and p.params.t > n_owners and p.params.eta == base.params.eta:
            return p
    raise ParameterError(f"no member of preset family {fam!r} has t > {n_owners}")
