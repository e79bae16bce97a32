"""Command-line entry point.

Exit codes: 0 success, 1 usage or validation error, 2 comparison failure,
3 functional-equivalence verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from weightprint import __version__
from weightprint.errors import FingerprintError, FormatError, ValidationError
from weightprint.evaluation import TestbedConfig, default_testbed_config, run_testbed
from weightprint.fingerprint import compare
from weightprint.forge import ForgeConfig, ManipulationSpec, apply_manipulation, forward_reference, generate_base
from weightprint.weights_io import load_bundle, save_bundle, vocab_path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_COMPARE = 2
EXIT_EQUIVALENCE = 3

EQUIVALENCE_TOL = 1e-6
VERIFY_SEQUENCES = 5
VERIFY_LENGTH = 12

log = logging.getLogger("weightprint")


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Audit record of one command invocation."""

    tool_version: str
    command: list[str]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seeds: dict[str, object] = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def finish(self) -> "RunManifest":
        self.finished_at = _now()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def verify_manifest(manifest: dict) -> list[str]:
    """Paths whose current digest no longer matches the manifest (missing files included)."""
    stale = []
    for section in ("inputs", "outputs"):
        for path, digest in manifest.get(section, {}).items():
            if not Path(path).exists() or sha256_file(path) != digest:
                stale.append(path)
    return stale


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path} must hold a JSON object")
    return data


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return load_bundle(path)


def cmd_compare(args) -> int:
    manifest = RunManifest(__version__, list(args.argv))
    bundle_a = _load(args.bundle_a)
    bundle_b = _load(args.bundle_b)
    for p in (args.bundle_a, args.bundle_b):
        manifest.add_input(p)
        manifest.add_input(vocab_path(p))
    try:
        report = compare(bundle_a, bundle_b, threads=args.threads)
    except FingerprintError as exc:
        print(f"error: comparison failed: {exc}", file=sys.stderr)
        return EXIT_COMPARE
    print(f"{report.similarity * 100:.2f}")
    if args.out:
        manifest.finish()
        payload = report.to_dict()
        payload["tool_version"] = __version__
        payload["input_digests"] = dict(manifest.inputs)
        payload["manifest"] = manifest.to_dict()
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_forge(args) -> int:
    manifest = RunManifest(__version__, list(args.argv))
    config = ForgeConfig.from_dict(_read_json(args.config))
    manifest.add_input(args.config)
    manifest.seeds["seed"] = config.seed
    save_bundle(generate_base(config), args.out)
    manifest.add_output(args.out)
    manifest.add_output(vocab_path(args.out))
    manifest.finish().write(_manifest_path(args.out))
    return EXIT_OK


def _verification_tokens(vocab_size: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    return rng.integers(0, vocab_size, size=(VERIFY_SEQUENCES, VERIFY_LENGTH))


def max_logit_divergence(base, derived) -> float:
    worst = 0.0
    for tokens in _verification_tokens(base.vocab_size):
        a = forward_reference(base, tokens).logits
        b = forward_reference(derived, tokens).logits
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def cmd_attack(args) -> int:
    manifest = RunManifest(__version__, list(args.argv))
    base = _load(args.bundle)
    spec = ManipulationSpec.from_dict(_read_json(args.spec))
    manifest.add_input(args.bundle)
    manifest.add_input(args.spec)
    manifest.seeds.update(
        {k: getattr(spec, k) for k in ("perm_seed", "sign_seed", "rotation_seed", "noise_seed")}
    )
    derived = apply_manipulation(base, spec)
    save_bundle(derived, args.out)
    manifest.add_output(args.out)
    manifest.add_output(vocab_path(args.out))
    manifest.finish().write(_manifest_path(args.out))
    if args.verify_equivalence:
        if not spec.is_noiseless:
            print("note: noise is nonzero, skipping equivalence check", file=sys.stderr)
            return EXIT_OK
        if spec.prunes:
            print("note: pruning does not preserve the function; expect divergence", file=sys.stderr)
        divergence = max_logit_divergence(base, derived)
        print(f"max logit divergence: {divergence:.3e}")
        if not divergence < EQUIVALENCE_TOL:
            print(f"error: divergence {divergence:.3e} >= {EQUIVALENCE_TOL:g}", file=sys.stderr)
            return EXIT_EQUIVALENCE
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = RunManifest(__version__, list(args.argv))
    if args.config == "default":
        config = default_testbed_config()
    else:
        config = TestbedConfig.from_dict(_read_json(args.config))
        manifest.add_input(args.config)
    manifest.seeds["base_seeds"] = sorted({p.base_seed for p in config.positives})
    manifest.seeds["negative_seeds"] = [[n.seed_a, n.seed_b] for n in config.negatives]
    report = run_testbed(config, threads=args.threads)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "eval_report.json": report.to_json(),
        "roc.csv": report.roc_csv(),
        "scores.csv": report.scores_csv(),
    }
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")
        manifest.add_output(out_dir / name)
    manifest.finish().write(out_dir / "manifest.json")
    print(
        f"auc={report.auc:.4f} pauc={report.pauc:.4f} tpr@1%fpr={report.tpr_at_1pct_fpr:.4f} "
        f"mean|Z|={report.mean_abs_z:.2f}"
    )
    if report.errors:
        print(f"warning: {len(report.errors)} pair(s) failed; see eval_report.json", file=sys.stderr)
    return EXIT_OK


def cmd_testbed_config(args) -> int:
    text = json.dumps(default_testbed_config().to_dict(), indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weightprint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compare", help="fingerprint similarity of two bundles, in percent")
    p.add_argument("bundle_a")
    p.add_argument("bundle_b")
    p.add_argument("--out", help="write the similarity report JSON here")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $FINGERPRINT_THREADS)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("forge", help="generate a seeded synthetic bundle")
    p.add_argument("config")
    p.add_argument("out")
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("attack", help="apply a weight manipulation to a bundle")
    p.add_argument("bundle")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--verify-equivalence", action="store_true", help="check logits are unchanged (noiseless specs)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="run the synthetic testbed ('default' for the built-in config)")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("testbed-config", help="print the built-in testbed config as JSON")
    p.add_argument("out", nargs="?", default="-")
    p.set_defaults(func=cmd_testbed_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args.argv = ["weightprint", *argv]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, FormatError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
