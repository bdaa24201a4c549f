"""Versioned, checksummed binary encoding of keys, ciphertexts and transcripts.

Layout (all integers little endian)::

    magic "MKTH" | version u16 | kind u8 | preset name 16 bytes | level u8
    | keyset bitmap u64 | sub-vector count u16 | aux word count u32
    | coefficient count u64 | aux words (8 bytes each) | coefficients (u64 each)
    | CRC32 of everything before it (u32)

Aux words carry the ring parameters followed by per-kind metadata; floats are
stored as their IEEE-754 bit pattern.  Coefficients are canonical residues in
row-major order.
"""
from __future__ import annotations

import struct
import zlib
from typing import Any

import numpy as np

from .bgv import KeySwitchKey, LeveledCiphertext, PublicKey, SecretKey, EvalKeys
from .mkbgv import EvalHelper, ExtendedEvalKey
from .params import ParameterError, RingParams
from .rgsw import RandomnessEncryption, RgswCiphertext
from .ring import RingElement

MAGIC = b"MKTH"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHB16sBQHIQ")

KIND_PK = 1
KIND_SK_SHARE = 2
KIND_CIPHERTEXT = 3
KIND_RGSW = 4
KIND_EVALKEY = 5
KIND_TRANSCRIPT = 6

KIND_NAMES = {
    KIND_PK: "pk",
    KIND_SK_SHARE: "sk-share",
    KIND_CIPHERTEXT: "ciphertext",
    KIND_RGSW: "rgsw",
    KIND_EVALKEY: "evalkey",
    KIND_TRANSCRIPT: "transcript",
}

# sub-types stored as the first metadata word
RGSW_CIPHERTEXT, RGSW_RANDOMNESS = 0, 1
EVAL_SWITCH, EVAL_HELPER, EVAL_EXTENDED, EVAL_SINGLE = 0, 1, 2, 3


class SerializationError(ValueError):
    """Malformed, truncated or corrupted serialized object."""


class UnsupportedVersionError(SerializationError):
    pass


def keyset_bitmap(keyset) -> int:
    out = 0
    for k in keyset:
        if not 0 <= k < 64:
            raise SerializationError(f"key id {k} does not fit the keyset bitmap")
        out |= 1 << k
    return out


def bitmap_keyset(bitmap: int) -> tuple[int, ...]:
    return tuple(k for k in range(64) if bitmap >> k & 1)


class _Writer:
    def __init__(self, params: RingParams):
        self.params = params
        self.aux: list[int] = []
        self.coeffs: list[np.ndarray] = []
        self._params(params)

    def u(self, v: int) -> None:
        self.aux.append(int(v))

    def f(self, v: float) -> None:
        self.aux.append(struct.unpack("<Q", struct.pack("<d", float(v)))[0])

    def elem(self, x: RingElement) -> None:
        self.coeffs.append(x.coeffs)

    def elems(self, xs) -> None:
        for x in xs:
            self.elem(x)

    def _params(self, p: RingParams) -> None:
        self.u(p.eta)
        self.u(p.t)
        self.u(len(p.moduli))
        for q in p.moduli:
            self.u(q)
        self.f(p.noise_stddev)
        self.u(p.noise_bound)
        self.u(p.smudging_bound)
        self.u(p.growth_budget)
        self.u(p.max_owners)


class _Reader:
    def __init__(self, aux: list[int], coeffs: np.ndarray):
        self.aux = aux
        self.pos = 0
        self.coeffs = coeffs
        self.cpos = 0
        self.params = self._params()

    def u(self) -> int:
        if self.pos >= len(self.aux):
            raise SerializationError("metadata ended early")
        v = self.aux[self.pos]
        self.pos += 1
        return v

    def f(self) -> float:
        return struct.unpack("<d", struct.pack("<Q", self.u()))[0]

    def elem(self, level: int) -> RingElement:
        ring = self.params.ring(level)
        end = self.cpos + ring.eta
        if end > len(self.coeffs):
            raise SerializationError("coefficient data ended early")
        c = self.coeffs[self.cpos : end].astype(np.int64)
        self.cpos = end
        if (c < 0).any() or (c >= ring.q).any():
            raise SerializationError("coefficient outside [0, q)")
        return RingElement(ring, c)

    def elems(self, level: int, n: int) -> tuple[RingElement, ...]:
        return tuple(self.elem(level) for _ in range(n))

    def _params(self) -> RingParams:
        eta, t, n = self.u(), self.u(), self.u()
        if n > 64:
            raise SerializationError("implausible modulus count")
        moduli = tuple(self.u() for _ in range(n))
        try:
            return RingParams(
                eta=eta,
                moduli=moduli,
                t=t,
                noise_stddev=self.f(),
                noise_bound=self.u(),
                smudging_bound=self.u(),
                growth_budget=self.u(),
                max_owners=self.u(),
            )
        except ParameterError as exc:
            raise SerializationError(f"invalid parameters: {exc}") from None

    def done(self) -> None:
        if self.pos != len(self.aux) or self.cpos != len(self.coeffs):
            raise SerializationError("trailing data")


# -- per-kind encoders ---------------------------------------------------------


def _write_rows(w: _Writer, rows) -> None:
    w.u(len(rows))
    w.u(len(rows[0]) if rows else 0)
    for row in rows:
        w.elems(row)


def _read_rows(r: _Reader, level: int):
    n, m = r.u(), r.u()
    return tuple(r.elems(level, m) for _ in range(n))


def _write_ksk(w: _Writer, k: KeySwitchKey) -> None:
    w.u(k.level)
    w.u(k.target_level)
    w.u(k.source_dim)
    w.u(keyset_bitmap(k.target_keyset))
    w.f(k.noise_var)
    w.f(k.coherent_var)
    _write_rows(w, k.hints)


def _read_ksk(r: _Reader) -> KeySwitchKey:
    level, target, dim, ks = r.u(), r.u(), r.u(), r.u()
    nv, cv = r.f(), r.f()
    hints = _read_rows(r, level)
    return KeySwitchKey(r.params, level, target, dim, bitmap_keyset(ks), hints, nv, cv)


def _write_rgsw(w: _Writer, c: RgswCiphertext) -> None:
    w.u(c.level)
    w.u(keyset_bitmap(c.keyset))
    w.u(c.owner)
    w.u(int(c.switch))
    w.u(len(c.row_noise_var))
    for v in c.row_noise_var:
        w.f(v)
    w.u(len(c.shared_var))
    for v in c.shared_var:
        w.f(v)
    _write_rows(w, c.rows)


def _read_rgsw(r: _Reader) -> RgswCiphertext:
    level, ks, owner, switch = r.u(), r.u(), r.u(), bool(r.u())
    rv = tuple(r.f() for _ in range(r.u()))
    sv = tuple(r.f() for _ in range(r.u()))
    rows = _read_rows(r, level)
    return RgswCiphertext(rows, level, bitmap_keyset(ks), owner, switch, rv, sv)


def _write_rand(w: _Writer, f: RandomnessEncryption, level: int) -> None:
    w.u(level)
    w.u(f.owner)
    w.f(f.noise_var)
    _write_rows(w, f.rows)


def _read_rand(r: _Reader) -> RandomnessEncryption:
    level, owner, nv = r.u(), r.u(), r.f()
    return RandomnessEncryption(_read_rows(r, level), owner, nv)


def _write_helper(w: _Writer, h: EvalHelper) -> None:
    w.u(h.key_id)
    for table, rand in ((h.theta, h.theta_rand), (h.psi, h.psi_rand)):
        w.u(len(table))
        for level in sorted(table, reverse=True):
            w.u(level)
            w.u(len(table[level]))
            for c, f in zip(table[level], rand[level]):
                _write_rgsw(w, c)
                _write_rand(w, f, level)


def _read_helper(r: _Reader) -> EvalHelper:
    key_id = r.u()
    tables = []
    for _ in range(2):
        table, rand = {}, {}
        for _ in range(r.u()):
            level, n = r.u(), r.u()
            pairs = [(_read_rgsw(r), _read_rand(r)) for _ in range(n)]
            table[level] = tuple(c for c, _ in pairs)
            rand[level] = tuple(f for _, f in pairs)
        tables.append((table, rand))
    (theta, theta_rand), (psi, psi_rand) = tables
    return EvalHelper(key_id, r.params, theta, theta_rand, psi, psi_rand)


def _write_key_table(w: _Writer, keys: dict[int, KeySwitchKey]) -> None:
    w.u(len(keys))
    for level in sorted(keys, reverse=True):
        _write_ksk(w, keys[level])


def _read_key_table(r: _Reader) -> dict[int, KeySwitchKey]:
    out = {}
    for _ in range(r.u()):
        k = _read_ksk(r)
        out[k.level] = k
    return out


def _encode(obj: Any) -> tuple[int, _Writer, int, int, int]:
    """Returns (kind, writer, level, keyset bitmap, sub-vector count)."""
    if isinstance(obj, LeveledCiphertext):
        w = _Writer(obj.params)
        w.f(obj.noise_var)
        w.u(obj.secret_level)
        for sub in obj.subvectors:
            w.elems(sub)
        return KIND_CIPHERTEXT, w, obj.level, keyset_bitmap(obj.keyset), len(obj.subvectors)
    if isinstance(obj, PublicKey):
        w = _Writer(obj.params)
        w.u(obj.key_id)
        w.f(obj.noise_var)
        w.f(obj.secret_var)
        w.u(int(obj.shared_a))
        for level, rows in enumerate(obj.rows):
            _write_rows(w, rows)
            if level > 0:
                _write_rows(w, obj.switch_rows[level])
        return KIND_PK, w, obj.params.top_level, keyset_bitmap([obj.key_id]), 0
    if isinstance(obj, SecretKey):
        w = _Writer(obj.params)
        w.u(obj.key_id)
        w.f(obj.secret_var)
        w.elems(obj.s_prime)
        return KIND_SK_SHARE, w, obj.params.top_level, keyset_bitmap([obj.key_id]), 0
    if isinstance(obj, KeySwitchKey):
        w = _Writer(obj.params)
        w.u(EVAL_SWITCH)
        _write_ksk(w, obj)
        return KIND_EVALKEY, w, obj.level, keyset_bitmap(obj.target_keyset), len(obj.target_keyset)
    if isinstance(obj, EvalHelper):
        w = _Writer(obj.params)
        w.u(EVAL_HELPER)
        _write_helper(w, obj)
        return KIND_EVALKEY, w, max(obj.theta, default=0), keyset_bitmap([obj.key_id]), 1
    if isinstance(obj, ExtendedEvalKey):
        params = next(iter(obj.mult.values())).params
        w = _Writer(params)
        w.u(EVAL_EXTENDED)
        w.u(keyset_bitmap(obj.keyset))
        _write_key_table(w, obj.mult)
        _write_key_table(w, obj.drop)
        return KIND_EVALKEY, w, max(obj.mult, default=0), keyset_bitmap(obj.keyset), len(obj.keyset)
    if isinstance(obj, EvalKeys):
        params = next(iter(obj.mult.values())).params
        w = _Writer(params)
        w.u(EVAL_SINGLE)
        _write_key_table(w, obj.mult)
        _write_key_table(w, obj.drop)
        return KIND_EVALKEY, w, max(obj.mult, default=0), 0, 1
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _params_of(c: RgswCiphertext) -> RingParams:
    raise SerializationError("RGSW ciphertexts need explicit parameters; use dumps(obj, params=...)")


def dumps(obj: Any, preset: str = "", *, params: RingParams | None = None) -> bytes:
    """Serialize ``obj``; ``params`` is only needed for bare RGSW ciphertexts."""
    if isinstance(obj, RgswCiphertext):
        if params is None:
            _params_of(obj)
        w = _Writer(params)
        w.u(RGSW_CIPHERTEXT)
        _write_rgsw(w, obj)
        kind, level, ks, nsub = KIND_RGSW, obj.level, keyset_bitmap(obj.keyset), obj.blocks
    elif isinstance(obj, RandomnessEncryption):
        if params is None:
            raise SerializationError("randomness encryptions need explicit parameters")
        level = obj.rows[0][0].level
        w = _Writer(params)
        w.u(RGSW_RANDOMNESS)
        _write_rand(w, obj, level)
        kind, ks, nsub = KIND_RGSW, keyset_bitmap([obj.owner]), 1
    else:
        kind, w, level, ks, nsub = _encode(obj)
    return _frame(kind, preset, level, ks, nsub, w.aux, w.coeffs)


def _frame(kind: int, preset: str, level: int, ks: int, nsub: int, aux: list[int], coeffs) -> bytes:
    name = preset.encode("utf-8")
    if len(name) > 16:
        raise SerializationError("preset name longer than 16 bytes")
    body = np.concatenate(coeffs).astype("<u8") if coeffs else np.zeros(0, dtype="<u8")
    head = HEADER.pack(MAGIC, FORMAT_VERSION, kind, name, level, ks, nsub, len(aux), body.size)
    payload = head + np.array(aux, dtype="<u8").tobytes() + body.tobytes()
    return payload + struct.pack("<I", zlib.crc32(payload))


def read_header(data: bytes) -> dict:
    if len(data) < HEADER.size + 4:
        raise SerializationError("truncated header")
    magic, version, kind, name, level, ks, nsub, naux, ncoeff = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SerializationError("not an MKTH object")
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is newer than supported {FORMAT_VERSION}")
    if kind not in KIND_NAMES:
        raise SerializationError(f"unknown object kind {kind}")
    return {
        "version": version,
        "kind": KIND_NAMES[kind],
        "kind_code": kind,
        "preset": name.rstrip(b"\0").decode("utf-8", "replace"),
        "level": level,
        "keyset": bitmap_keyset(ks),
        "subvectors": nsub,
        "aux_words": naux,
        "coefficients": ncoeff,
    }


def _unframe(data: bytes) -> tuple[dict, list[int], np.ndarray]:
    h = read_header(data)
    size = HEADER.size + 8 * h["aux_words"] + 8 * h["coefficients"] + 4
    if len(data) != size:
        raise SerializationError(f"expected {size} bytes, got {len(data)} (truncated or padded)")
    (crc,) = struct.unpack_from("<I", data, size - 4)
    if zlib.crc32(data[: size - 4]) != crc:
        raise SerializationError("checksum mismatch")
    off = HEADER.size
    aux = np.frombuffer(data, dtype="<u8", count=h["aux_words"], offset=off).tolist()
    off += 8 * h["aux_words"]
    coeffs = np.frombuffer(data, dtype="<u8", count=h["coefficients"], offset=off)
    return h, aux, coeffs


def loads(data: bytes) -> Any:
    h, aux, coeffs = _unframe(data)
    if h["kind"] == "transcript":
        raise SerializationError("use load_transcript_records for transcripts")
    r = _Reader(aux, coeffs)
    kind = h["kind_code"]
    try:
        obj = _decode(kind, h, r)
    except (IndexError, KeyError) as exc:
        raise SerializationError(f"malformed body: {exc}") from None
    r.done()
    return obj


def _decode(kind: int, h: dict, r: _Reader) -> Any:
    params = r.params
    if kind == KIND_CIPHERTEXT:
        nv, key_level = r.f(), r.u()
        level = h["level"]
        subs = tuple((r.elem(level), r.elem(level)) for _ in range(h["subvectors"]))
        return LeveledCiphertext(
            subs, level, h["keyset"], params, nv, None if key_level == level else key_level
        )
    if kind == KIND_PK:
        key_id, nv, sv, shared = r.u(), r.f(), r.f(), bool(r.u())
        rows, switch = [], [None]
        for level in range(params.top_level + 1):
            rows.append(_read_rows(r, level))
            if level > 0:
                switch.append(_read_rows(r, level))
        return PublicKey(key_id, params, tuple(rows), tuple(switch), nv, sv, shared)
    if kind == KIND_SK_SHARE:
        key_id, sv = r.u(), r.f()
        s = tuple(r.elem(level) for level in range(params.top_level + 1))
        return SecretKey(key_id, params, s, sv)
    if kind == KIND_RGSW:
        sub = r.u()
        if sub == RGSW_CIPHERTEXT:
            return _read_rgsw(r)
        if sub == RGSW_RANDOMNESS:
            return _read_rand(r)
        raise SerializationError(f"unknown rgsw sub-type {sub}")
    if kind == KIND_EVALKEY:
        sub = r.u()
        if sub == EVAL_SWITCH:
            return _read_ksk(r)
        if sub == EVAL_HELPER:
            return _read_helper(r)
        if sub == EVAL_EXTENDED:
            ks = bitmap_keyset(r.u())
            return ExtendedEvalKey(ks, _read_key_table(r), _read_key_table(r))
        if sub == EVAL_SINGLE:
            return EvalKeys(_read_key_table(r), _read_key_table(r))
        raise SerializationError(f"unknown evalkey sub-type {sub}")
    raise SerializationError(f"cannot decode kind {kind}")


# -- transcripts -----------------------------------------------------------------

PHASES = ("setup", "encrypt", "evaluate", "decrypt")


def party_code(name: str) -> int:
    if name == "dealer":
        return 0
    if name == "evaluator":
        return 1
    if name == "client":
        return 2
    if name.startswith("owner-"):
        return 16 + int(name.split("-", 1)[1])
    raise SerializationError(f"unknown party {name!r}")


def party_name(code: int) -> str:
    if code >= 16:
        return f"owner-{code - 16}"
    return {0: "dealer", 1: "evaluator", 2: "client"}[code]


def dump_transcript_records(records: list[dict], payload_types: list[str], preset: str = "") -> bytes:
    """Encode transcript records {seq, sender, receiver, phase, payload_type, payload_bytes}."""
    aux = [len(payload_types)]
    for name in payload_types:
        raw = name.encode("utf-8")
        aux.append(len(raw))
        aux.extend(raw)
    aux.append(len(records))
    for rec in records:
        aux += [
            rec["seq"],
            party_code(rec["sender"]),
            party_code(rec["receiver"]),
            PHASES.index(rec["phase"]),
            payload_types.index(rec["payload_type"]),
            rec["payload_bytes"],
        ]
    return _frame(KIND_TRANSCRIPT, preset, 0, 0, 0, aux, [])


def load_transcript_records(data: bytes) -> list[dict]:
    h, aux, _ = _unframe(data)
    if h["kind"] != "transcript":
        raise SerializationError(f"expected a transcript, found {h['kind']}")
    try:
        pos = 0
        types = []
        for _ in range(aux[pos]):
            n = aux[pos + 1]
            types.append(bytes(aux[pos + 2 : pos + 2 + n]).decode("utf-8"))
            pos += 1 + n
        pos += 1
        count = aux[pos]
        pos += 1
        out = []
        for _ in range(count):
            seq, snd, rcv, ph, pt, nbytes = aux[pos : pos + 6]
            pos += 6
            out.append(
                {
                    "seq": seq,
                    "sender": party_name(snd),
                    "receiver": party_name(rcv),
                    "phase": PHASES[ph],
                    "payload_type": types[pt],
                    "payload_bytes": nbytes,
                }
            )
    except (IndexError, KeyError, ValueError) as exc:
        raise SerializationError(f"malformed transcript: {exc}") from None
    return out


def save(path, obj: Any, preset: str = "", **kw) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(obj, preset, **kw))


def load(path) -> Any:
    with open(path, "rb") as fh:
        return loads(fh.read())
