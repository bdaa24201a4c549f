"""Collaborative encrypted evaluation of a forest of decision stumps.

Parties are small state machines that only talk through a ``Network`` which
logs every message into a ``Transcript``:

* a trusted dealer hands each model owner its key share (setup);
* owners encrypt their stump (y, A, B) under the joint key; the client sends
  its bit x under its own key; the evaluator extends everything to the
  two-key set {client, joint};
* the evaluator computes each stump b*A + (1-b)*B with b = x XOR y, and sums
  the stump outputs into an encrypted tally;
* each owner returns a smudged partial decryption of the joint sub-vector,
  the evaluator aggregates them and ships ciphertext plus aggregate to the
  client, which finishes decryption with its own secret and takes the
  majority (ties go to class 0).

With t = 2 the XOR is a plain addition and the tally is only meaningful for
one owner.  With t > 2 the XOR is computed as x + y - 2xy, which costs one
extra multiplicative level.
"""
from __future__ import annotations

import json
import threading
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .bgv import (
    LeveledCiphertext,
    NoiseOverflowError,
    PublicKey,
    SecretKey,
    decode,
    enc,
    eval_add,
    eval_sub,
    kgen,
    measured_noise,
    setup,
)
from .mkbgv import (
    EvalHelper,
    ExtendedEvalKey,
    drop_level_ext,
    eval_mult_ext,
    extend,
    extended_evalkgen,
    gen_helper,
    joint_secrets,
    dec_joint,
)
from .params import ParameterError, ParameterPreset, RingParams, preset_for_owners
from .ring import RingElement
from .threshold import (
    CLIENT_KEY_ID,
    IncompletePartialsError,
    PartialDecryption,
    aggregate_partials,
    check_decryption_budget,
    dealer_keygen,
    partial_decrypt,
)

PHASES = ("setup", "encrypt", "evaluate", "decrypt")

# payload types each phase may carry
PAYLOAD_TYPES = {
    "setup": ("key-share", "joint-eval-material", "client-eval-material"),
    "encrypt": ("model-ciphertexts",),
    "evaluate": ("query", "result"),
    "decrypt": ("decrypt-request", "partial-decryption"),
}


class ProtocolError(RuntimeError):
    """A party received a message it cannot handle in its current state."""


class TallyOverflowError(ParameterError):
    """The plaintext modulus cannot hold a tally of every stump."""


# -- plaintext model -----------------------------------------------------------


@dataclass(frozen=True)
class DecisionStump:
    y: int
    a: int
    b: int
    owner: int = 0

    def __post_init__(self) -> None:
        for name in ("y", "a", "b"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"stump field {name} must be a bit")


def stump_value(x: int, stump: DecisionStump) -> int:
    """b*A + (1-b)*B with b = x XOR y."""
    b = x ^ stump.y
    return b * stump.a + (1 - b) * stump.b


def majority(tally: int, n: int) -> int:
    """Class 1 wins only with a strict majority; ties fall to class 0."""
    return 1 if 2 * tally > n else 0


def forest_oracle(x: int, stumps: Sequence[DecisionStump]) -> tuple[int, int]:
    """(tally, label) of the plaintext forest."""
    tally = sum(stump_value(x, s) for s in stumps)
    return tally, majority(tally, len(stumps))


def random_stumps(n: int, rng: np.random.Generator) -> list[DecisionStump]:
    bits = rng.integers(0, 2, size=(n, 3))
    return [DecisionStump(int(y), int(a), int(b), owner=i) for i, (y, a, b) in enumerate(bits)]


# -- transport -----------------------------------------------------------------


def payload_size(obj: Any) -> int:
    """Serialized size in bytes of a message payload."""
    from . import serialize

    if isinstance(obj, dict):
        return sum(payload_size(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return sum(payload_size(v) for v in obj)
    if isinstance(obj, (int, np.integer)):
        return 8
    if isinstance(obj, RingElement):
        return 8 * obj.ring.eta
    if isinstance(obj, PartialDecryption):
        return 8 * obj.rho.ring.eta + 24
    if obj is None:
        return 0
    return len(serialize.dumps(obj))


@dataclass
class ProtocolMessage:
    seq: int
    sender: str
    receiver: str
    phase: str
    payload_type: str
    payload: Any = field(repr=False)
    _size: int | None = field(default=None, repr=False)

    @property
    def payload_bytes(self) -> int:
        if self._size is None:
            self._size = payload_size(self.payload)
        return self._size

    def record(self) -> dict:
        return {
            "seq": self.seq,
            "sender": self.sender,
            "receiver": self.receiver,
            "phase": self.phase,
            "payload_type": self.payload_type,
            "payload_bytes": self.payload_bytes,
        }


class Transcript:
    """Append-only message log; ``append`` is the single writer."""

    def __init__(self) -> None:
        self.messages: list[ProtocolMessage] = []
        self._lock = threading.Lock()

    def append(self, sender: str, receiver: str, phase: str, payload_type: str, payload: Any) -> ProtocolMessage:
        if phase not in PAYLOAD_TYPES:
            raise ProtocolError(f"unknown phase {phase!r}")
        if payload_type not in PAYLOAD_TYPES[phase]:
            raise ProtocolError(f"payload {payload_type!r} is not allowed in phase {phase!r}")
        with self._lock:
            msg = ProtocolMessage(len(self.messages), sender, receiver, phase, payload_type, payload)
            self.messages.append(msg)
        return msg

    def count(self, phase: str | None = None, *, party: str | None = None) -> int:
        return sum(
            1
            for m in self.messages
            if (phase is None or m.phase == phase)
            and (party is None or party in (m.sender, m.receiver) or (party == "owner" and _is_owner(m)))
        )

    def counters(self) -> dict[str, int]:
        return {p: self.count(p) for p in PHASES}

    def owner_setup_interactions(self) -> int:
        return sum(1 for m in self.messages if m.phase == "setup" and _is_owner(m))

    def records(self) -> list[dict]:
        return [m.record() for m in self.messages]

    def to_jsonl(self, *, payloads: bool = False) -> str:
        lines = []
        for m in self.messages:
            rec = m.record()
            if payloads:
                rec["payload"] = _payload_hex(m.payload)
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def ciphertexts(self):
        """Every leveled ciphertext carried by any message."""
        for m in self.messages:
            yield from _find_ciphertexts(m.payload)

    def to_bytes(self, preset: str = "") -> bytes:
        from . import serialize

        types = [t for phase in PHASES for t in PAYLOAD_TYPES[phase]]
        return serialize.dump_transcript_records(self.records(), types, preset)


def _is_owner(m: ProtocolMessage) -> bool:
    return m.sender.startswith("owner-") or m.receiver.startswith("owner-")


def _find_ciphertexts(obj: Any):
    if isinstance(obj, LeveledCiphertext):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _find_ciphertexts(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _find_ciphertexts(v)


def _payload_hex(obj: Any):
    from . import serialize

    if isinstance(obj, dict):
        return {k: _payload_hex(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_payload_hex(v) for v in obj]
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, RingElement):
        return obj.coeffs.astype("<u8").tobytes().hex()
    if isinstance(obj, PartialDecryption):
        return {"owner": obj.owner, "ciphertext_id": obj.ciphertext_id, "rho": _payload_hex(obj.rho)}
    return serialize.dumps(obj).hex()


class Network:
    """In-memory, in-order delivery between registered parties."""

    def __init__(self, transcript: Transcript | None = None) -> None:
        self.parties: dict[str, Any] = {}
        self.transcript = transcript or Transcript()

    def register(self, party) -> None:
        self.parties[party.name] = party
        party.network = self

    def send(self, sender: str, receiver: str, phase: str, payload_type: str, payload: Any):
        if receiver not in self.parties:
            raise ProtocolError(f"unknown receiver {receiver!r}")
        msg = self.transcript.append(sender, receiver, phase, payload_type, payload)
        return self.parties[receiver].receive(msg)


# -- parties ---------------------------------------------------------------------


class Party:
    name = "party"
    network: Network

    def receive(self, msg: ProtocolMessage):
        handler = getattr(self, "on_" + msg.payload_type.replace("-", "_"), None)
        if handler is None:
            raise ProtocolError(f"{self.name} cannot handle {msg.payload_type!r}")
        return handler(msg)

    def send(self, receiver: str, phase: str, payload_type: str, payload: Any):
        return self.network.send(self.name, receiver, phase, payload_type, payload)

    def secret_keys(self) -> list[SecretKey]:
        """Every secret key this party currently holds (for role-isolation checks)."""
        return [v for v in vars(self).values() if isinstance(v, SecretKey)]


class Dealer(Party):
    name = "dealer"

    def __init__(self, params: RingParams, rng: np.random.Generator) -> None:
        self.params = params
        self.rng = rng

    def run(self, pp, owners: Sequence[str], evaluator: str) -> None:
        material = dealer_keygen(pp, len(owners), self.rng)
        for name, share in zip(owners, material.shares):
            self.send(name, "setup", "key-share", {"share": share, "joint_pk": material.joint_pk})
        self.send(
            evaluator,
            "setup",
            "joint-eval-material",
            {"joint_pk": material.joint_pk, "joint_helper": material.joint_helper},
        )


class ModelOwner(Party):
    def __init__(self, index: int, rng: np.random.Generator) -> None:
        self.index = index
        self.name = f"owner-{index}"
        self.rng = rng
        self.share: SecretKey | None = None
        self.joint_pk: PublicKey | None = None
        self.stump: DecisionStump | None = None

    def on_key_share(self, msg: ProtocolMessage) -> None:
        self.share = msg.payload["share"]
        self.joint_pk = msg.payload["joint_pk"]

    def encrypt_model(self, stump: DecisionStump, evaluator: str) -> None:
        if self.joint_pk is None:
            raise ProtocolError(f"{self.name} has no joint key yet")
        self.stump = stump
        r = self.rng
        payload = {
            "y": enc(self.joint_pk, stump.y, r),
            "a": enc(self.joint_pk, stump.a, r),
            "b": enc(self.joint_pk, stump.b, r),
        }
        self.send(evaluator, "encrypt", "model-ciphertexts", payload)

    def on_decrypt_request(self, msg: ProtocolMessage) -> None:
        if self.share is None:
            raise ProtocolError(f"{self.name} holds no key share")
        part = partial_decrypt(self.share, msg.payload["c1"], self.rng, ciphertext_id=msg.payload["id"])
        self.send(msg.sender, "decrypt", "partial-decryption", part)


@dataclass
class ClientResult:
    plaintext: list[int]
    tally: int
    label: int
    n_stumps: int


class Client(Party):
    name = "client"

    def __init__(self, params: RingParams, pp, rng: np.random.Generator, key_id: int = CLIENT_KEY_ID) -> None:
        self.params = params
        self.rng = rng
        self.sk, self.pk = kgen(pp, rng, key_id)
        self.helper: EvalHelper | None = None
        self.n_owners = 0
        self.result: ClientResult | None = None

    def register_keys(self, evaluator: str) -> None:
        self.helper = gen_helper(self.sk, self.pk, self.rng, with_bits=True)
        self.send(evaluator, "setup", "client-eval-material", {"pk": self.pk, "helper": self.helper})

    def query(self, x: int, evaluator: str, n_owners: int) -> None:
        if x not in (0, 1):
            raise ValueError("client input must be a bit")
        self.n_owners = n_owners
        self.result = None
        self.send(evaluator, "evaluate", "query", {"x": enc(self.pk, x, self.rng)})

    def on_result(self, msg: ProtocolMessage) -> ClientResult:
        p = msg.payload
        plain = client_decrypt(self.sk, p["ciphertext"], p["rho"], p["joint_id"], self.n_owners)
        n = p["n_stumps"]
        self.result = ClientResult(plain, plain[0], majority(plain[0], n), n)
        return self.result


def client_decrypt(sk: SecretKey, c: LeveledCiphertext, rho: RingElement, joint_id: int, n_owners: int) -> list[int]:
    """<c_client, s_client> + (c_joint0 - rho), after checking noise plus smudging fits."""
    params = c.params
    check_decryption_budget(
        c.noise_bound, params.moduli[c.level], params.t, n_owners, params.smudging_bound
    )
    c0, c1 = c.subvectors[c.keyset.index(sk.key_id)]
    m0 = c.subvectors[c.keyset.index(joint_id)][0]
    s = c.ring.lift(sk.s_prime[c.secret_level])
    return decode(params, c0 - c1 * s + m0 - rho)


@dataclass
class ModelCiphertexts:
    y: LeveledCiphertext
    a: LeveledCiphertext
    b: LeveledCiphertext


class Evaluator(Party):
    name = "evaluator"

    def __init__(self, params: RingParams, rng: np.random.Generator, executor: Executor | None = None) -> None:
        self.params = params
        self.rng = rng
        self.executor = executor
        self.joint_pk: PublicKey | None = None
        self.joint_helper: EvalHelper | None = None
        self.client_pks: dict[int, PublicKey] = {}
        self.client_helpers: dict[int, EvalHelper] = {}
        self.eek_cache: dict[int, ExtendedEvalKey] = {}
        self.model: dict[str, ModelCiphertexts] = {}
        self.owner_order: list[str] = []
        self.one: LeveledCiphertext | None = None
        self.query_ct: LeveledCiphertext | None = None
        self.client_id: int | None = None
        self.partials: list[PartialDecryption] = []
        self._next_id = 0
        self.pending: tuple[int, LeveledCiphertext] | None = None

    # setup
    def on_joint_eval_material(self, msg: ProtocolMessage) -> None:
        self.joint_pk = msg.payload["joint_pk"]
        self.joint_helper = msg.payload["joint_helper"]

    def on_client_eval_material(self, msg: ProtocolMessage) -> None:
        pk = msg.payload["pk"]
        self.client_pks[pk.key_id] = pk
        self.client_helpers[pk.key_id] = msg.payload["helper"]
        self.eek_cache.pop(pk.key_id, None)

    # encryption
    def on_model_ciphertexts(self, msg: ProtocolMessage) -> None:
        p = msg.payload
        if msg.sender not in self.owner_order:
            self.owner_order.append(msg.sender)
        self.model[msg.sender] = ModelCiphertexts(p["y"], p["a"], p["b"])

    def on_query(self, msg: ProtocolMessage) -> None:
        x = msg.payload["x"]
        self.client_id = x.keyset[0]
        if self.client_id not in self.client_pks:
            raise ProtocolError(f"no evaluation material for client key {self.client_id}")
        self.query_ct = x

    @property
    def keyset(self) -> tuple[int, ...]:
        return tuple(sorted((self.client_id, self.joint_pk.key_id)))

    def eval_key(self) -> ExtendedEvalKey:
        cid = self.client_id
        if cid not in self.eek_cache:
            pks = [self.client_pks[cid], self.joint_pk]
            helpers = [self.client_helpers[cid], self.joint_helper]
            self.eek_cache[cid] = extended_evalkgen(pks, helpers, executor=self.executor)
        return self.eek_cache[cid]

    def extended_inputs(self) -> tuple[LeveledCiphertext, list[ModelCiphertexts], LeveledCiphertext]:
        if self.query_ct is None or not self.model:
            raise ProtocolError("evaluation needs the client query and every model")
        ks = self.keyset
        self.one = extend(enc(self.joint_pk, 1, self.rng), ks)
        x = extend(self.query_ct, ks)
        models = [
            ModelCiphertexts(*(extend(c, ks) for c in (m.y, m.a, m.b)))
            for m in (self.model[o] for o in self.owner_order)
        ]
        return x, models, self.one

    # evaluation
    def evaluate_stumps(self) -> list[LeveledCiphertext]:
        eek = self.eval_key()
        x, models, one = self.extended_inputs()
        if self.params.t == 2:
            return [_stump_t2(x, m, one, eek) for m in models]
        x2, one2 = drop_level_ext(x, eek), drop_level_ext(one, eek)
        return [_stump_arith(x, x2, m, one2, eek) for m in models]

    def evaluate_forest(self) -> LeveledCiphertext:
        n = len(self.model)
        if self.params.t <= n:
            raise TallyOverflowError(f"plaintext modulus t={self.params.t} cannot count {n} votes")
        vs = self.evaluate_stumps()
        tally = vs[0]
        for v in vs[1:]:
            tally = eval_add(tally, v)
        return tally

    # decryption
    def request_partials(self, c: LeveledCiphertext) -> int:
        """Ask every owner for a partial decryption of the joint sub-vector."""
        cid = self._next_id
        self._next_id += 1
        self.pending = (cid, c)
        c1 = c.subvectors[c.keyset.index(self.joint_pk.key_id)][1]
        for name in self.owner_order:
            self.send(name, "decrypt", "decrypt-request", {"c1": c1, "id": cid})
        return cid

    def on_partial_decryption(self, msg: ProtocolMessage) -> None:
        self.partials.append((msg.sender, msg.payload))

    def release(self, client: str, n_stumps: int) -> ClientResult:
        if self.pending is None:
            raise ProtocolError("no decryption in progress")
        cid, c = self.pending
        got = [(who, p) for who, p in self.partials if p.ciphertext_id == cid]
        missing = sorted(set(self.owner_order) - {who for who, _ in got})
        if missing:
            raise IncompletePartialsError(f"missing partial decryptions from {missing}")
        rho = aggregate_partials([p for _, p in got])
        self.partials = [(w, p) for w, p in self.partials if p.ciphertext_id != cid]
        self.pending = None
        payload = {"ciphertext": c, "rho": rho, "joint_id": self.joint_pk.key_id, "n_stumps": n_stumps}
        return self.send(client, "evaluate", "result", payload)


def _stump_t2(x, m: ModelCiphertexts, one, eek) -> LeveledCiphertext:
    b = eval_add(x, m.y)
    return eval_add(eval_mult_ext(b, m.a, eek), eval_mult_ext(eval_sub(one, b), m.b, eek))


def _stump_arith(x, x2, m: ModelCiphertexts, one2, eek) -> LeveledCiphertext:
    """XOR as x + y - 2xy for t > 2, then the selector one level lower."""
    xy = eval_mult_ext(x, m.y, eek)
    y2 = drop_level_ext(m.y, eek)
    b = eval_sub(eval_add(x2, y2), eval_add(xy, xy))
    a2, b2 = drop_level_ext(m.a, eek), drop_level_ext(m.b, eek)
    return eval_add(eval_mult_ext(b, a2, eek), eval_mult_ext(eval_sub(one2, b), b2, eek))


# -- system state and phases -------------------------------------------------------


@dataclass
class ProtocolState:
    params: RingParams
    pp: Any
    owners: list[ModelOwner]
    client: Client
    evaluator: Evaluator
    network: Network
    setup_transcript: Transcript
    stumps: list[DecisionStump] = field(default_factory=list)
    x: int | None = None

    @property
    def transcript(self) -> Transcript:
        return self.network.transcript

    @property
    def n_owners(self) -> int:
        return len(self.owners)

    def begin_query(self) -> Transcript:
        """Start a fresh transcript for one client query; setup stays recorded separately."""
        self.network.transcript = Transcript()
        self.stumps = []
        self.x = None
        return self.network.transcript


def _spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(n)]


def run_setup(
    n_owners: int,
    params: RingParams,
    rng: np.random.Generator | int,
    *,
    executor: Executor | None = None,
) -> ProtocolState:
    if n_owners < 1:
        raise ValueError("need at least one model owner")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    r_pp, r_dealer, r_client, r_eval, *r_owners = _spawn(rng, 4 + n_owners)
    pp = setup(params, r_pp)
    net = Network()
    dealer = Dealer(params, r_dealer)
    owners = [ModelOwner(i, r) for i, r in enumerate(r_owners)]
    client = Client(params, pp, r_client)
    evaluator = Evaluator(params, r_eval, executor)
    for p in (dealer, *owners, client, evaluator):
        net.register(p)
    dealer.run(pp, [o.name for o in owners], evaluator.name)
    client.register_keys(evaluator.name)
    # the dealer leaves once shares are out
    del net.parties[dealer.name]
    setup_transcript = net.transcript
    net.transcript = Transcript()
    return ProtocolState(params, pp, owners, client, evaluator, net, setup_transcript)


def run_encryption(state: ProtocolState, stumps: Sequence[DecisionStump], x: int) -> ProtocolState:
    if len(stumps) != state.n_owners:
        raise ValueError("one stump per model owner")
    if x not in (0, 1):
        raise ValueError("client input must be a bit")
    state.stumps = list(stumps)
    state.x = x
    for owner, stump in zip(state.owners, stumps):
        owner.encrypt_model(stump, state.evaluator.name)
    state.client.query(x, state.evaluator.name, state.n_owners)
    return state


def eval_stump(state: ProtocolState, i: int) -> LeveledCiphertext:
    return state.evaluator.evaluate_stumps()[i]


def eval_forest(state: ProtocolState) -> LeveledCiphertext:
    return state.evaluator.evaluate_forest()


def run_decryption(state: ProtocolState, result: LeveledCiphertext) -> ClientResult:
    ev = state.evaluator
    ev.request_partials(result)
    return ev.release(state.client.name, len(state.stumps) or state.n_owners)


def run_query(state: ProtocolState, stumps: Sequence[DecisionStump], x: int) -> tuple[ClientResult, LeveledCiphertext]:
    """One full query on fresh per-query transcript: encrypt, evaluate, decrypt."""
    state.begin_query()
    run_encryption(state, stumps, x)
    tally = eval_forest(state)
    return run_decryption(state, tally), tally


def evaluate_offline(
    joint_pk: PublicKey,
    joint_helper: EvalHelper,
    client_pk: PublicKey,
    client_helper: EvalHelper,
    query: LeveledCiphertext,
    models: Sequence[tuple[LeveledCiphertext, LeveledCiphertext, LeveledCiphertext]],
    rng: np.random.Generator,
    executor: Executor | None = None,
) -> LeveledCiphertext:
    """The evaluator's work without a network: encrypted tally from stored inputs."""
    ev = Evaluator(joint_pk.params, rng, executor)
    ev.joint_pk, ev.joint_helper = joint_pk, joint_helper
    ev.client_pks[client_pk.key_id] = client_pk
    ev.client_helpers[client_pk.key_id] = client_helper
    for i, (y, a, b) in enumerate(models):
        name = f"owner-{i}"
        ev.owner_order.append(name)
        ev.model[name] = ModelCiphertexts(y, a, b)
    if query.keyset != (client_pk.key_id,):
        raise ProtocolError("query is not encrypted under the client key")
    ev.client_id = client_pk.key_id
    ev.query_ct = query
    return ev.evaluate_forest()


# -- oracles used by the demo report and the tests ------------------------------------


def oracle_secrets(state: ProtocolState, c: LeveledCiphertext) -> list[RingElement]:
    shares = [o.share for o in state.owners]
    return joint_secrets(state.client.sk, shares, c.keyset, c.secret_level)


def oracle_decrypt(state: ProtocolState, c: LeveledCiphertext) -> list[int]:
    return dec_joint(state.client.sk, [o.share for o in state.owners], c)


def role_violations(state: ProtocolState) -> list[str]:
    """Secrets found where they must not be."""
    out = []
    if state.evaluator.secret_keys():
        out.append("evaluator holds a secret key")
    client_ids = {s.key_id for s in state.client.secret_keys()}
    if client_ids - {state.client.sk.key_id}:
        out.append("client holds a model-owner share")
    for o in state.owners:
        ids = {s.key_id for s in o.secret_keys()}
        if state.client.sk.key_id in ids:
            out.append(f"{o.name} holds the client secret")
        if hasattr(o, "x") or hasattr(o, "query_ct"):
            out.append(f"{o.name} saw the client input")
    return out


# -- demo ---------------------------------------------------------------------------


@dataclass
class DemoConfig:
    preset: str = "toy"
    owners: int = 3
    seed: int = 0
    inputs: tuple[int, ...] = (0, 1)
    stumps: tuple[DecisionStump, ...] | None = None
    threads: int = 0


def run_demo(config: DemoConfig) -> dict:
    preset: ParameterPreset = preset_for_owners(config.preset, config.owners)
    params = preset.params
    rng = np.random.default_rng(config.seed)
    r_setup, r_model = _spawn(rng, 2)
    executor = ThreadPoolExecutor(config.threads) if config.threads > 0 else None
    try:
        t0 = time.perf_counter()
        state = run_setup(config.owners, params, r_setup, executor=executor)
        t_setup = time.perf_counter() - t0
        stumps = list(config.stumps) if config.stumps else random_stumps(config.owners, r_model)
        runs = []
        overflow_events = 0
        transcripts = [state.setup_transcript]
        for x in config.inputs:
            t1 = time.perf_counter()
            try:
                res, tally_ct = run_query(state, stumps, x)
            except NoiseOverflowError:
                overflow_events += 1
                runs.append({"x": x, "error": "noise-overflow"})
                continue
            transcripts.append(state.transcript)
            exp_tally, exp_label = forest_oracle(x, stumps)
            secrets = oracle_secrets(state, tally_ct)
            runs.append(
                {
                    "x": x,
                    "tally": res.tally,
                    "label": res.label,
                    "expected_tally": exp_tally,
                    "expected_label": exp_label,
                    "match": (res.tally, res.label) == (exp_tally, exp_label),
                    "oracle_match": oracle_decrypt(state, tally_ct)[0] == res.tally,
                    "level": tally_ct.level,
                    "tracked_noise_bits": float(np.log2(tally_ct.noise_bound)),
                    "measured_noise_bits": float(np.log2(max(1, measured_noise(tally_ct, secrets)))),
                    "modulus_bits": float(np.log2(params.moduli[tally_ct.level])),
                    "seconds": time.perf_counter() - t1,
                    "counts": state.transcript.counters(),
                }
            )
    finally:
        if executor is not None:
            executor.shutdown()
    max_sub = max((len(c.subvectors) for t in transcripts for c in t.ciphertexts()), default=0)
    return {
        "preset": preset.name,
        "requested_preset": config.preset,
        "insecure": preset.insecure,
        "eta": params.eta,
        "t": params.t,
        "moduli_bits": [q.bit_length() for q in params.moduli],
        "owners": config.owners,
        "seed": config.seed,
        "stumps": [[s.y, s.a, s.b] for s in stumps],
        "setup_seconds": t_setup,
        "setup_owner_interactions": state.setup_transcript.owner_setup_interactions(),
        "setup_messages": len(state.setup_transcript.messages),
        "runs": runs,
        "noise_overflow_events": overflow_events,
        "max_transcript_subvectors": max_sub,
        "extended_dimension": "2x2",
        "model_copies_per_owner": 1 if state.evaluator.model else 0,
        "role_violations": role_violations(state),
        "all_match": all(r.get("match") for r in runs),
        "transcripts": transcripts,
    }


def format_report(report: dict) -> str:
    lines = [
        f"preset: {report['preset']} (eta={report['eta']}, t={report['t']}, "
        f"moduli bits={report['moduli_bits']}){' INSECURE toy parameters' if report['insecure'] else ''}",
        f"owners: {report['owners']}  seed: {report['seed']}",
        f"stumps (y, A, B): {report['stumps']}",
        f"setup: {report['setup_seconds']:.2f} s, owner interactions: {report['setup_owner_interactions']}",
    ]
    for r in report["runs"]:
        if "error" in r:
            lines.append(f"x={r['x']}: {r['error']}")
            continue
        c = r["counts"]
        lines.append(
            f"x={r['x']}: tally={r['tally']} label={r['label']} "
            f"(plaintext forest: tally={r['expected_tally']} label={r['expected_label']}) "
            f"{'OK' if r['match'] else 'MISMATCH'}"
        )
        lines.append(
            f"  noise: tracked 2^{r['tracked_noise_bits']:.1f}, measured 2^{r['measured_noise_bits']:.1f}, "
            f"q_{r['level']} = 2^{r['modulus_bits']:.1f}; {r['seconds']:.2f} s"
        )
        lines.append(
            f"  encrypt messages: {c['encrypt']}  evaluate messages: {c['evaluate']}  "
            f"decrypt messages: {c['decrypt']}"
        )
    lines += [
        f"noise overflow events: {report['noise_overflow_events']}",
        f"ciphertext dimension: fresh 1x2, extended {report['extended_dimension']} for any number of owners "
        f"(largest seen: {report['max_transcript_subvectors']} sub-vectors; a naive extension would need "
        f"{report['owners'] + 1})",
        f"encrypted model copies per owner: {report['model_copies_per_owner']}",
        f"role violations: {', '.join(report['role_violations']) or 'none'}",
        f"result: {'all runs match the plaintext forest' if report['all_match'] else 'MISMATCH'}",
    ]
    return "\n".join(lines)
