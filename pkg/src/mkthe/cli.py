"""Command-line front end.

Every command is deterministic given ``--seed``.  Errors exit non-zero and
print ``error: <category>: <detail>`` where the category is one of
bad-args, bad-file, crypto-failure or noise-overflow.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import serialize
from .bgv import (
    KeysetMismatchError,
    LevelError,
    LeveledCiphertext,
    NoiseOverflowError,
    PlaintextError,
    PublicKey,
    SecretKey,
    enc,
    kgen,
    public_params_of,
    setup,
)
from .mkbgv import EvalHelper, gen_helper
from .params import ParameterError, get_preset, parse_key_values, preset_for_owners
from .protocol import (
    DemoConfig,
    DecisionStump,
    ProtocolError,
    client_decrypt,
    evaluate_offline,
    format_report,
    majority,
    run_demo,
)
from .threshold import CLIENT_KEY_ID, IncompletePartialsError, aggregate_partials, dealer_keygen, partial_decrypt

EXIT_CODES = {"bad-args": 2, "bad-file": 3, "crypto-failure": 4, "noise-overflow": 5}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _rng(args) -> np.random.Generator:
    return np.random.default_rng(args.seed)


def _load(path, expected: type):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CliError("bad-file", f"{path}: {exc.strerror}") from None
    try:
        obj = serialize.loads(data)
    except serialize.SerializationError as exc:
        raise CliError("bad-file", f"{path}: {exc}") from None
    if not isinstance(obj, expected):
        raise CliError("bad-file", f"{path}: expected {expected.__name__}, found {type(obj).__name__}")
    return obj


def _save(out: Path, name: str, obj, preset: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_bytes(serialize.dumps(obj, preset))
    return path


def _bits(text: str, n: int | None = None) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise CliError("bad-args", f"expected comma separated bits, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise CliError("bad-args", f"expected {n} values, got {len(vals)}")
    return vals


# -- commands ------------------------------------------------------------------------


def cmd_setup(args) -> int:
    """Dealer: owner shares (one file each), joint public key and joint helper."""
    preset = preset_for_owners(args.preset, args.owners)
    rng = _rng(args)
    pp = setup(preset.params, rng)
    material = dealer_keygen(pp, args.owners, rng)
    out = Path(args.out)
    for i, share in enumerate(material.shares):
        _save(out, f"owner-{i}.sk", share, preset.name)
    _save(out, "joint.pk", material.joint_pk, preset.name)
    _save(out, "joint.helper", material.joint_helper, preset.name)
    print(f"preset {preset.name}: wrote {args.owners} owner shares, joint.pk, joint.helper to {out}")
    return 0


def cmd_keygen(args) -> int:
    """Client key pair and helper over the same common A as the joint key."""
    out = Path(args.out)
    rng = _rng(args)
    joint = Path(args.joint) if args.joint else out / "joint.pk"
    if joint.exists():
        pp = public_params_of(_load(joint, PublicKey))
        preset = serialize.read_header(joint.read_bytes())["preset"]
    else:
        if args.joint:
            raise CliError("bad-file", f"{joint}: no such file")
        p = get_preset(args.preset)
        pp, preset = setup(p.params, rng), p.name
    sk, pk = kgen(pp, rng, CLIENT_KEY_ID)
    helper = gen_helper(sk, pk, rng)
    _save(out, "client.sk", sk, preset)
    _save(out, "client.pk", pk, preset)
    _save(out, "client.helper", helper, preset)
    print(f"wrote client.sk, client.pk, client.helper to {out}")
    return 0


def cmd_encrypt(args) -> int:
    pk: PublicKey = _load(args.pk, PublicKey)
    preset = serialize.read_header(Path(args.pk).read_bytes())["preset"]
    rng = _rng(args)
    out = Path(args.out)
    if args.stump is not None:
        y, a, b = _bits(args.stump, 3)
        try:
            DecisionStump(y, a, b)
        except ValueError as exc:
            raise CliError("bad-args", str(exc)) from None
        for name, v in (("y", y), ("a", a), ("b", b)):
            _save(out.parent, f"{out.name}.{name}.ct", enc(pk, v, rng), preset)
        print(f"wrote {out}.y.ct, {out}.a.ct, {out}.b.ct")
    elif args.value is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(serialize.dumps(enc(pk, _bits(args.value), rng), preset))
        print(f"wrote {out}")
    else:
        raise CliError("bad-args", "give --value or --stump")
    return 0


def cmd_evaluate(args) -> int:
    d = Path(args.dir)
    joint_pk = _load(d / "joint.pk", PublicKey)
    joint_helper = _load(d / "joint.helper", EvalHelper)
    client_pk = _load(d / "client.pk", PublicKey)
    client_helper = _load(d / "client.helper", EvalHelper)
    query = _load(args.query, LeveledCiphertext)
    models = []
    for prefix in args.models:
        models.append(tuple(_load(f"{prefix}.{n}.ct", LeveledCiphertext) for n in ("y", "a", "b")))
    executor = ThreadPoolExecutor(args.threads) if args.threads > 0 else None
    try:
        tally = evaluate_offline(
            joint_pk, joint_helper, client_pk, client_helper, query, models, _rng(args), executor
        )
    finally:
        if executor is not None:
            executor.shutdown()
    preset = serialize.read_header((d / "joint.pk").read_bytes())["preset"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize.dumps(tally, preset))
    print(f"wrote {out} (level {tally.level}, {len(tally.subvectors)} sub-vectors)")
    return 0


def cmd_decrypt(args) -> int:
    """Smudged partial decryption by every share, aggregation, client finish."""
    c = _load(args.ct, LeveledCiphertext)
    client = _load(args.client, SecretKey)
    shares = [_load(p, SecretKey) for p in args.shares]
    if args.owners is not None and len(shares) != args.owners:
        raise CliError("crypto-failure", f"need {args.owners} owner shares, got {len(shares)}")
    joint_ids = [k for k in c.keyset if k != client.key_id]
    if len(joint_ids) != 1 or client.key_id not in c.keyset:
        raise CliError("crypto-failure", f"ciphertext keyset {c.keyset} does not pair this client with one joint key")
    rng = _rng(args)
    c1 = c.subvectors[c.keyset.index(joint_ids[0])][1]
    parts = [partial_decrypt(s, c1, rng) for s in shares]
    rho = aggregate_partials(parts)
    plain = client_decrypt(client, c, rho, joint_ids[0], len(shares))
    n = args.stumps if args.stumps is not None else len(shares)
    result = {"tally": plain[0], "label": majority(plain[0], n), "plaintext": plain}
    print(json.dumps(result) if args.json else f"tally {plain[0]} label {result['label']}")
    return 0


def cmd_demo(args) -> int:
    report = run_demo(
        DemoConfig(preset=args.preset, owners=args.owners, seed=args.seed, threads=args.threads)
    )
    transcripts = report.pop("transcripts")
    if args.dump_transcript:
        path = Path(args.dump_transcript)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(t.to_jsonl(payloads=args.payloads) for t in _renumbered(transcripts)))
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(format_report(report))
    if report["noise_overflow_events"]:
        raise CliError("noise-overflow", "noise overflow during the demo")
    return 0 if report["all_match"] else EXIT_CODES["crypto-failure"]


def _renumbered(transcripts):
    """Merge per-query transcripts into one with a single increasing sequence."""
    from .protocol import Transcript

    merged = Transcript()
    for t in transcripts:
        for m in t.messages:
            merged.append(m.sender, m.receiver, m.phase, m.payload_type, m.payload)
    return [merged]


# -- argument parsing ------------------------------------------------------------------

CONFIG_KEYS = {"preset", "owners", "seed", "out", "threads"}


def _common(p: argparse.ArgumentParser, *, preset: bool = True, owners: bool = False) -> None:
    p.add_argument("--config", help="key=value file with defaults; flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0)
    if preset:
        p.add_argument("--preset", default="toy")
    if owners:
        p.add_argument("--owners", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mkthe", description="Two-key threshold BGV toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="dealer: owner shares, joint key and helper")
    _common(p, owners=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("keygen", help="client key pair and helper")
    _common(p)
    p.add_argument("--out", default=".")
    p.add_argument("--joint", help="joint public key whose common A to reuse (default OUT/joint.pk)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encrypt", help="encrypt a plaintext or a stump")
    _common(p, preset=False)
    p.add_argument("--pk", required=True)
    p.add_argument("--value", help="comma separated plaintext coefficients")
    p.add_argument("--stump", help="y,A,B bits; writes OUT.y.ct, OUT.a.ct, OUT.b.ct")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("evaluate", help="evaluator: encrypted tally of every stump")
    _common(p, preset=False)
    p.add_argument("--dir", default=".", help="directory with joint.pk/.helper and client.pk/.helper")
    p.add_argument("--query", required=True)
    p.add_argument("--models", nargs="+", required=True, help="stump prefixes as written by encrypt --stump")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decrypt", help="partial decryptions, aggregation and client finish")
    _common(p, preset=False)
    p.add_argument("--ct", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--shares", nargs="+", required=True)
    p.add_argument("--owners", type=int, help="expected number of shares")
    p.add_argument("--stumps", type=int, help="number of stumps behind the tally (default: share count)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decrypt)

    p = sub.add_parser("demo", help="run every phase in memory and print a report")
    _common(p, owners=True)
    p.add_argument("--dump-transcript", help="write the transcript as JSON lines")
    p.add_argument("--payloads", action="store_true", help="include hex payloads in the dump")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_demo)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        kv = parse_key_values(Path(args.config).read_text())
    except OSError as exc:
        raise CliError("bad-file", f"{args.config}: {exc.strerror}") from None
    unknown = set(kv) - CONFIG_KEYS
    if unknown:
        raise CliError("bad-args", f"unknown config keys: {', '.join(sorted(unknown))}")
    # re-parse with config values as defaults so explicit flags still win
    sub = parser._subparsers._group_actions[0].choices[args.command]
    defaults = {k: kv[k] for k in kv if hasattr(args, k)}
    for action in sub._actions:
        if action.dest in defaults and action.type is not None:
            defaults[action.dest] = action.type(defaults[action.dest])
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:
            return EXIT_CODES["bad-args"] if exc.code else 0
        return args.func(args)
    except CliError as exc:
        category, msg = exc.category, str(exc)
    except NoiseOverflowError as exc:
        category, msg = "noise-overflow", str(exc)
    except (ParameterError, PlaintextError) as exc:
        category, msg = "bad-args", str(exc)
    except (KeysetMismatchError, LevelError, IncompletePartialsError, ProtocolError, ValueError) as exc:
        category, msg = "crypto-failure", str(exc)
    print(f"error: {category}: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
