"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible plan,
3 verification or authentication failure. Diagnostics go to stderr; reports
go to ``--out`` or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .crypto import aes, sponge
from .errors import (
    AuthenticationFailure,
    CapacityExceeded,
    CyclicDependency,
    PeriodTooShort,
    SecnodeError,
    TileInfeasible,
)
from .perf import Calibration, PerfModel

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
_INFEASIBLE = (TileInfeasible, CapacityExceeded, CyclicDependency, PeriodTooShort)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _model(path: Optional[str]) -> PerfModel:
    return PerfModel(Calibration.load(path))


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _render(report, fmt: str) -> str:
    return report.to_csv() if fmt == "csv" else report.to_json() + "\n"


# -- crypt ------------------------------------------------------------------

def _read_input(path: str) -> bytes:
    return sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()


def _write_output(data: bytes, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
    else:
        Path(path).write_bytes(data)


def cmd_crypt(a) -> int:
    data = _read_input(a.input)
    key = bytes.fromhex(a.key)
    if a.mode == "ecb":
        out = aes.ecb(key, data, a.direction)
    elif a.mode == "xts":
        key2 = bytes.fromhex(a.key2) if a.key2 else key
        sector = (a.sector.to_bytes(16, "little") if a.address is None
                  else aes.sector_from_address(a.address, a.sector_size))
        out = aes.xts(aes.XtsContext(key, key2, sector), data, a.direction)
    else:
        cfg = sponge.SpongeConfig(key, bytes.fromhex(a.iv), a.rate, a.rounds, a.tag_bits)
        n_tag = a.tag_bits // 8
        if a.direction == aes.ENCRYPT:
            msg = sponge.auth_encrypt(cfg, data)
            out = msg.ciphertext + msg.tag
        else:
            if len(data) < n_tag:
                raise UsageError("input shorter than the authentication tag")
            out = sponge.auth_decrypt(cfg, sponge.AuthCiphertext(data[:-n_tag], data[-n_tag:]))
    _write_output(out, a.output)
    return EXIT_OK


# -- conv -------------------------------------------------------------------

def cmd_conv(a) -> int:
    from .hwce import feature_map_to_bytes, hwce_convolve, load_job_manifest

    job = load_job_manifest(a.manifest)
    maps = hwce_convolve(job)
    out_dir = Path(a.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, fm in enumerate(maps):
        p = out_dir / f"{a.prefix}{i}.bin"
        p.write_bytes(feature_map_to_bytes(fm))
        names.append(str(p))
    summary = {"outputs": names, "width": maps[0].width, "height": maps[0].height, "q": maps[0].q,
               "precision": job.weights.precision, "filter_size": job.weights.filter_size, "version": __version__}
    sys.stdout.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------

def load_scenario(path, calibration: Optional[str] = None):
    """Resolve a scenario file into (phases, platform, vdd, policy, equivalent_ops, meta).

    Relative paths inside the file are resolved against its directory; an
    explicit ``calibration`` argument overrides ``calibration_ref``.
    """
    from .sim import Phase, PlatformConfig
    from .workloads import build, platform_for

    path = Path(path)
    sc = json.loads(path.read_text())
    cal = calibration
    if cal is None and sc.get("calibration_ref"):
        cal = str((path.parent / sc["calibration_ref"]).resolve())
    model = _model(cal)
    vdd = float(sc.get("vdd", 0.8))
    overrides = dict(sc.get("platform", {}))
    meta: Dict[str, Any] = {"scenario": path.name}
    if "usecase_ref" in sc:
        ref = sc["usecase_ref"]
        uc_id, level = (ref, "PLUS_HWCRYPT") if isinstance(ref, str) else (ref["id"], ref.get("level", "PLUS_HWCRYPT"))
        wl = build(uc_id, level, vdd, PlatformConfig(model=model, **overrides))
        platform = platform_for(wl, model, **overrides)
        policy = sc.get("mode_policy") or wl.mode_policy
        meta.update(usecase=uc_id, level=wl.level.name)
        return wl.phases, platform, vdd, policy, wl.equivalent_ops, meta
    if "phases" not in sc:
        raise UsageError(f"{path}: scenario needs 'phases' or 'usecase_ref'")
    phases = [Phase(**p) for p in sc["phases"]]
    platform = PlatformConfig(model=model, **overrides)
    return phases, platform, vdd, sc.get("mode_policy"), sc.get("equivalent_ops"), meta


def simulate_scenario(path: str, calibration: Optional[str] = None):
    from .sim import run, schedule

    phases, platform, vdd, policy, eq_ops, meta = load_scenario(path, calibration)
    rep = run(schedule(phases, platform, vdd, policy), platform, eq_ops)
    rep.meta.update(meta)
    return rep


def _simulate_one(job: Tuple[str, Optional[str], str, Optional[str]]) -> Tuple[str, int, str]:
    path, cal, fmt, out = job
    try:
        rep = simulate_scenario(path, cal)
    except _INFEASIBLE as e:
        return path, EXIT_INFEASIBLE, f"{path}: infeasible: {e}"
    except (SecnodeError, ValueError, KeyError, TypeError, OSError) as e:
        return path, EXIT_USAGE, f"{path}: {type(e).__name__}: {e}"
    text = _render(rep, fmt)
    if out is None:
        return path, EXIT_OK, text
    Path(out).write_text(text)
    return path, EXIT_OK, ""


def cmd_simulate(a) -> int:
    if len(a.scenarios) > 1 and not a.out:
        raise UsageError("several scenarios need --out DIR")
    jobs = []
    for s in a.scenarios:
        out = None
        if a.out:
            out_dir = Path(a.out)
            if len(a.scenarios) > 1 or out_dir.is_dir():
                out_dir.mkdir(parents=True, exist_ok=True)
                out = str(out_dir / f"{Path(s).stem}.{a.format}")
            else:
                out = a.out
        jobs.append((s, a.calibration, a.format, out))
    if a.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as ex:
            results = list(ex.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    code = EXIT_OK
    for path, rc, text in results:
        if rc:
            print(text, file=sys.stderr)
            code = max(code, rc)
        elif text:
            sys.stdout.write(text)
    return code


# -- usecase ----------------------------------------------------------------

def cmd_usecase(a) -> int:
    from .workloads import simulate

    rep = simulate(a.id, a.level, a.vdd, _model(a.calibration))
    _emit(_render(rep, a.format), a.out)
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def _lookup(report: Dict[str, Any], dotted: str):
    node: Any = report
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def check_targets(report: Dict[str, Any], targets: Dict[str, Any]) -> List[Tuple[str, bool, str]]:
    """Compare report metrics to targets; returns (metric, ok, message) rows.

    A target is ``{"value", "rel_tol"}``, ``{"value", "abs_tol"}``, ``{"min"}``
    and/or ``{"max"}``. A file keyed by use-case id is narrowed using the
    report's ``meta.usecase``.
    """
    uc = _lookup(report, "meta.usecase")
    if uc in targets and isinstance(targets[uc], dict):
        targets = targets[uc]
    rows = []
    for metric, t in sorted(targets.items()):
        got = _lookup(report, metric)
        if not isinstance(got, (int, float)):
            rows.append((metric, False, "missing from report"))
            continue
        ok = True
        parts = []
        if "value" in t:
            ref = float(t["value"])
            tol = float(t["rel_tol"]) * abs(ref) if "rel_tol" in t else float(t.get("abs_tol", 0.0))
            ok &= abs(got - ref) <= tol
            parts.append(f"{got:.6g} vs {ref:.6g} +/- {tol:.3g}")
        if "min" in t:
            ok &= got >= float(t["min"])
            parts.append(f"{got:.6g} >= {t['min']}")
        if "max" in t:
            ok &= got <= float(t["max"])
            parts.append(f"{got:.6g} <= {t['max']}")
        rows.append((metric, bool(ok), "; ".join(parts)))
    return rows


def cmd_verify(a) -> int:
    report = json.loads(Path(a.report).read_text())
    targets = json.loads(Path(a.targets).read_text())
    rows = check_targets(report, targets)
    for metric, ok, msg in rows:
        print(f"{'PASS' if ok else 'FAIL'} {metric}: {msg}")
    return EXIT_OK if rows and all(ok for _, ok, _ in rows) else EXIT_VERIFY


# -- calibrate --------------------------------------------------------------

def cmd_calibrate(a) -> int:
    from . import calibrate

    argv = ["--out", a.out] if a.out else []
    if a.no_fit:
        argv.append("--no-fit")
    return calibrate.main(argv)


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .workloads import USE_CASES, OptLevel

    common = _Parser(add_help=False)
    common.add_argument("--calibration", help="calibration JSON (default: $SECNODE_CALIBRATION or built-in)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = _Parser(prog="secnode", description="Secure-node SoC model: crypto, convolution engine, simulator.")
    p.add_argument("--version", action="version", version=f"secnode {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("crypt", help="encrypt or decrypt a file")
    c.add_argument("--mode", choices=("ecb", "xts", "sponge"), required=True)
    c.add_argument("--direction", choices=(aes.ENCRYPT, aes.DECRYPT), default=aes.ENCRYPT)
    c.add_argument("--key", required=True, help="16-byte key, hex (XTS: tweak key)")
    c.add_argument("--key2", help="XTS data key, hex (default: --key, i.e. XEX)")
    c.add_argument("--sector", type=int, default=0, help="XTS sector number")
    c.add_argument("--address", type=lambda s: int(s, 0), help="XTS base address; overrides --sector")
    c.add_argument("--sector-size", type=int, default=4096)
    c.add_argument("--iv", default="", help="sponge IV, hex")
    c.add_argument("--rate", type=int, default=128, help="sponge rate in bits")
    c.add_argument("--rounds", type=int, default=20, help="sponge rounds per permutation call")
    c.add_argument("--tag-bits", type=int, default=128)
    c.add_argument("input", help="input file or -")
    c.add_argument("output", nargs="?", help="output file (default stdout)")
    c.set_defaults(func=cmd_crypt)

    v = sub.add_parser("conv", help="run a convolution-engine job from blobs")
    v.add_argument("manifest", help="JSON {input, weights, q_out, y_in?}")
    v.add_argument("--out", help="output directory (default .)")
    v.add_argument("--prefix", default="out_")
    v.set_defaults(func=cmd_conv)

    s = sub.add_parser("simulate", parents=[common], help="simulate scenario files")
    s.add_argument("scenarios", nargs="+")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    u = sub.add_parser("usecase", parents=[common], help="simulate a built-in use case")
    u.add_argument("id", choices=USE_CASES)
    u.add_argument("--level", type=OptLevel.parse, default=OptLevel.PLUS_HWCRYPT,
                   help=f"one of {', '.join(l.name for l in OptLevel)} (case-insensitive)")
    u.add_argument("--vdd", type=float, default=0.8)
    u.set_defaults(func=cmd_usecase)

    f = sub.add_parser("verify", help="check a report against targets")
    f.add_argument("report")
    f.add_argument("targets")
    f.set_defaults(func=cmd_verify)

    k = sub.add_parser("calibrate", help="refit the default calibration")
    k.add_argument("--out", help="where to write (default: the packaged default.json)")
    k.add_argument("--no-fit", action="store_true")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except AuthenticationFailure as e:
        print(f"authentication failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except _INFEASIBLE as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SecnodeError, ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
