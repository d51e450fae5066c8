"""Running scenarios into report directories and checking those reports.

Every run writes ``report.json`` (the numbers), one or more CSV tables and a
``manifest.json`` holding the config hash, seed, package versions and the
SHA-256 of every other file. Nothing time-dependent is recorded, so the same
scenario and seed always give byte-identical directories.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._rng import derive_int
from .bell import (
    chsh_from_published,
    predicted_chsh,
    run_bell_test,
    visibility_scan,
)
from .coincidence import match
from .linksim import simulate_run
from .polarization import hv_weight
from .qkd.keys import bits_to_hex
from .qkd.session import run_session
from .scenario import Scenario

REPORT = "report.json"
MANIFEST = "manifest.json"

# acceptance tolerances
TABLE1_S, TABLE1_S_TOL = 2.447, 5e-4
TABLE1_SIGMA, TABLE1_SIGMA_TOL = 0.0878, 5e-5
TABLE1_Z, TABLE1_Z_TOL = 5.0, 0.1
BELL_S_RANGE = (2.30, 2.60)
BELL_SIGMA_RANGE = (0.05, 0.15)
BELL_PREDICTION_SIGMAS = 4.0
BELL_RATE_RANGE = (150.0, 300.0)
SCAN_TARGETS = {"hv": 0.94, "diag": 0.89}
SCAN_TOL = 0.03
SIFT_FRACTION, SIFT_TOL = 0.5, 0.03
QBER_RANGE = (0.043, 0.073)
RATE_TARGET, RATE_FACTOR = 10.0, 2.0


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


# --- experiments ---------------------------------------------------------------


def _bell_published(scn: Scenario) -> tuple[dict, dict]:
    res = chsh_from_published(scn.bell.e_values, scn.bell.deviations)
    report = {**res.to_dict(), "mode": "published"}
    rows = [(*e.settings, e.e_value, e.sigma) for e in res.components]
    return report, {"correlations.csv": _csv(["alice_deg", "bob_deg", "E", "sigma_E"], rows)}


def _bell_simulate(scn: Scenario) -> tuple[dict, dict]:
    spec = scn.bell
    runs = []
    for i in range(spec.runs):
        cfg = scn.link.with_(seed=derive_int(scn.seed, "bell", i))
        run = run_bell_test(cfg, spec.normalize, spec.convention)
        runs.append((cfg.seed, run))
    s = np.array([r.result.s_value for _, r in runs])
    sig = np.array([r.result.sigma for _, r in runs])
    sd = float(np.std(s, ddof=1)) if s.size > 1 else float(sig[0])
    report = {
        "mode": "simulate",
        "runs": spec.runs,
        "normalized": spec.normalize,
        "mean_s": float(s.mean()),
        "sd_s": sd,
        "sem_s": sd / math.sqrt(s.size) if s.size > 1 else float(sig[0]),
        "mean_sigma": float(sig.mean()),
        "min_s": float(s.min()),
        "max_s": float(s.max()),
        "predicted_s": predicted_chsh(scn.link, spec.convention),
        "mean_coincidence_rate": float(np.mean([r.coincidences for _, r in runs])) / scn.link.duration,
        "first_run": runs[0][1].to_dict(),
        "per_run": [{"seed": sd_, "s_value": r.result.s_value, "sigma": r.result.sigma,
                     "coincidences": r.coincidences} for sd_, r in runs],
    }
    rows = []
    for k, (seed, r) in enumerate(runs):
        e = [x.e_value for x in r.result.components]
        rows.append((k, seed, r.result.s_value, r.result.sigma, *e, r.coincidences))
    header = ["run", "seed", "S", "sigma_S", "E_ab", "E_ab2", "E_a2b", "E_a2b2", "coincidences"]
    return report, {"runs.csv": _csv(header, rows)}


def _scan_basis(bob_angle: float) -> str:
    # a fringe against a fixed Bob angle: H/V curves sit on the H/V basis
    return "hv" if hv_weight(bob_angle, bob_angle) >= 0.5 else "diag"


def _bell_scan(scn: Scenario) -> tuple[dict, dict]:
    spec = scn.scan
    files = {}
    curves = visibility_scan(scn.link, spec.bob_angles, spec.alice_angles, spec.weighted,
                             spec.convention)
    out = []
    for c in curves:
        name = f"curve_bob_{c.bob_angle:06.2f}.csv"
        files[name] = c.to_csv()
        out.append({**c.to_dict(), "basis": _scan_basis(c.bob_angle), "csv": name,
                    "target": SCAN_TARGETS[_scan_basis(c.bob_angle)]})
    report = {"curves": out, "background": None}
    if spec.compare_background:
        noisy = visibility_scan(scn.link.with_(**spec.compare_background), spec.bob_angles,
                                spec.alice_angles, spec.weighted, spec.convention)
        bg = []
        for c in noisy:
            name = f"background_curve_bob_{c.bob_angle:06.2f}.csv"
            files[name] = c.to_csv()
            bg.append({**c.to_dict(), "csv": name})
        report["background"] = {"overrides": spec.compare_background, "curves": bg}
    rows = [(c["bob_angle"], c["basis"], c["fit"]["visibility"], c["fit"]["sigma_visibility"])
            for c in out]
    files["visibilities.csv"] = _csv(["bob_angle_deg", "basis", "visibility", "sigma"], rows)
    return report, files


def _qkd(scn: Scenario) -> tuple[dict, dict]:
    spec = scn.qkd
    sim = simulate_run(scn.link)
    records = match(sim.alice, sim.bob, scn.link.window, spec.convention)
    res = run_session(records, spec.protocol, seed=scn.seed, placement=spec.placement,
                      session=f"{scn.name}-{scn.seed}", duration=scn.link.duration)
    files = {
        "transcript_alice.jsonl": "".join(line + "\n" for line in res.transcript_alice),
        "transcript_bob.jsonl": "".join(line + "\n" for line in res.transcript_bob),
    }
    report = {"placement": spec.placement, "aborted": None, "ledger": res.ledger,
              "transcript_key_bits": res.transcript_audit()}
    if res.aborted is not None:
        report["aborted"] = {"stage": res.aborted.stage, "reason": res.aborted.reason}
    else:
        files["alice.key"] = bits_to_hex(res.alice.key.bits) + "\n"
        files["bob.key"] = bits_to_hex(res.bob.key.bits) + "\n"
        led = res.ledger
        pipeline = ["coincidences", "balanced", "sifted", "reconciled_effective", "final"]
        files["ledger.csv"] = _csv(["stage", "bits"], [(k, led[k]) for k in pipeline])
    return report, files


def run_scenario(scn: Scenario, report_dir: Path | None = None) -> dict:
    """Run a scenario and write its reports; returns the report dictionary."""
    if scn.experiment == "bell_test":
        fn = _bell_published if scn.bell.mode == "published" else _bell_simulate
    elif scn.experiment == "visibility_scan":
        fn = _bell_scan
    else:
        fn = _qkd
    report, files = fn(scn)
    report = _clean({"name": scn.name, "experiment": scn.experiment, "seed": scn.seed, **report})
    files[REPORT] = _dump(report)
    write_reports(Path(report_dir or scn.report_dir), files, scn)
    return report


def write_reports(out: Path, files: dict[str, str], scn: Scenario) -> None:
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name in sorted(files):
        data = files[name].encode("utf-8")
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "scenario": scn.name,
        "experiment": scn.experiment,
        "seed": scn.seed,
        "config_sha256": scn.config_hash,
        "config": scn.source,
        "versions": {
            "entlink": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "files": digests,
    }
    (out / MANIFEST).write_text(_dump(_clean(manifest)), encoding="utf-8")


# --- verification --------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    criterion: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.criterion}: {self.detail}"


def _in(x, lo, hi) -> bool:
    return isinstance(x, (int, float)) and lo <= x <= hi


def _verify_bell(r: dict) -> list[Check]:
    if r.get("mode") == "published":
        s, sig, z = r.get("S"), r.get("sigma_S"), r.get("significance")
        return [
            Check("table1.S", _in(s, TABLE1_S - TABLE1_S_TOL, TABLE1_S + TABLE1_S_TOL),
                  f"S={s} expected {TABLE1_S}±{TABLE1_S_TOL}"),
            Check("table1.sigma_S",
                  _in(sig, TABLE1_SIGMA - TABLE1_SIGMA_TOL, TABLE1_SIGMA + TABLE1_SIGMA_TOL),
                  f"sigma={sig} expected {TABLE1_SIGMA}±{TABLE1_SIGMA_TOL}"),
            Check("table1.significance", _in(z, TABLE1_Z - TABLE1_Z_TOL, TABLE1_Z + TABLE1_Z_TOL),
                  f"z={z} expected {TABLE1_Z}±{TABLE1_Z_TOL}"),
        ]
    s, sig, pred, sem = r.get("mean_s"), r.get("mean_sigma"), r.get("predicted_s"), r.get("sem_s")
    close = _in(s, -1e9, 1e9) and _in(pred, -1e9, 1e9) and _in(sem, 0, 1e9) \
        and abs(s - pred) <= BELL_PREDICTION_SIGMAS * sem
    return [
        Check("bell.S_range", _in(s, *BELL_S_RANGE), f"mean S={s} over {r.get('runs')} runs"),
        Check("bell.sigma_range", _in(sig, *BELL_SIGMA_RANGE), f"mean sigma_S={sig}"),
        Check("bell.prediction", bool(close),
              f"|{s} - {pred}| vs {BELL_PREDICTION_SIGMAS}*SEM={sem}"),
        Check("bell.coincidence_rate", _in(r.get("mean_coincidence_rate"), *BELL_RATE_RANGE),
              f"{r.get('mean_coincidence_rate')} per s"),
    ]


def _verify_scan(r: dict) -> list[Check]:
    out = []
    curves = r.get("curves") or []
    if not curves:
        return [Check("scan.curves", False, "no curves in report")]
    for c in curves:
        v = c["fit"].get("visibility")
        t = c.get("target")
        out.append(Check(f"scan.visibility[bob={c['bob_angle']}]", _in(v, t - SCAN_TOL, t + SCAN_TOL),
                         f"V={v} expected {t}±{SCAN_TOL}"))
    bg = r.get("background")
    if bg:
        for c, n in zip(curves, bg["curves"]):
            v0, v1 = c["fit"].get("visibility"), n["fit"].get("visibility")
            ok = _in(v0, -1e9, 1e9) and _in(v1, -1e9, 1e9) and v1 < v0
            out.append(Check(f"scan.background_lowers[bob={c['bob_angle']}]", bool(ok),
                             f"V {v0} -> {v1} with background"))
    return out


def _verify_qkd(r: dict) -> list[Check]:
    if r.get("aborted"):
        return [Check("qkd.completed", False, f"session aborted: {r['aborted']}")]
    led = r.get("ledger") or {}
    try:
        frac = led["sifted"] / led["balanced"]
    except (KeyError, TypeError, ZeroDivisionError):
        frac = None
    q, rate = led.get("qber_sifted"), led.get("rate_bits_per_s")
    return [
        Check("qkd.sifted_fraction", _in(frac, SIFT_FRACTION - SIFT_TOL, SIFT_FRACTION + SIFT_TOL),
              f"sifted/balanced={frac}"),
        Check("qkd.qber", _in(q, *QBER_RANGE), f"QBER over sifted key={q} (sample estimate {led.get('qber')})"),
        Check("qkd.keys_match", led.get("keys_match") is True, f"keys_match={led.get('keys_match')}"),
        Check("qkd.rate", _in(rate, RATE_TARGET / RATE_FACTOR, RATE_TARGET * RATE_FACTOR),
              f"rate={rate} bit/s"),
        Check("qkd.leakage_audit", led.get("leaked_bits") == r.get("transcript_key_bits"),
              f"ledger {led.get('leaked_bits')} vs transcript {r.get('transcript_key_bits')}"),
    ]


def verify(report_dir) -> list[Check]:
    """Check a report directory against the acceptance tolerances."""
    d = Path(report_dir)
    path = d / REPORT
    if not path.is_file():
        return [Check("report", False, f"missing {path}")]
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return [Check("report", False, f"unreadable {path}: {exc.msg}")]
    checks = []
    mpath = d / MANIFEST
    if not mpath.is_file():
        checks.append(Check("manifest", False, f"missing {mpath}"))
    else:
        files = json.loads(mpath.read_text(encoding="utf-8")).get("files", {})
        bad = [n for n, h in sorted(files.items())
               if not (d / n).is_file() or hashlib.sha256((d / n).read_bytes()).hexdigest() != h]
        checks.append(Check("manifest", not bad,
                            "all file hashes match" if not bad else f"changed or missing: {bad}"))
    kind = report.get("experiment")
    if kind == "bell_test":
        checks += _verify_bell(report)
    elif kind == "visibility_scan":
        checks += _verify_scan(report)
    elif kind == "qkd_session":
        checks += _verify_qkd(report)
    else:
        checks.append(Check("report", False, f"unknown experiment {kind!r}"))
    return checks
