"""Declarative scenario files: one JSON document per experiment.

A scenario names the experiment, a seed, where reports go and the link
configuration; an experiment-specific section carries the rest::

    {
      "name": "bell_paper",
      "experiment": "bell_test",
      "seed": 1,
      "report_dir": "reports/bell_paper",
      "link": {"background_rate_alice": 16500, "duration": 20,
               "visibility": {"v_hv": 0.94, "v_diag": 0.89}},
      "bell": {"runs": 20}
    }

Everything is validated before anything runs; problems raise
:class:`ScenarioError` with the offending field.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .linksim import AnalyzerSetting, LinkConfig
from .polarization import VisibilityModel
from .qkd.parties import PA_MODES, QkdConfig

EXPERIMENTS = ("bell_test", "visibility_scan", "qkd_session")
CONVENTIONS = ("full", "half")
PLACEMENTS = ("inline", "threads", "processes")


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def to_dict(self) -> dict:
        return {"error": "validation", "field": self.field, "message": self.message}


@dataclass(frozen=True)
class BellSpec:
    mode: str = "simulate"  # or "published"
    runs: int = 1
    normalize: bool = True
    convention: str = "full"
    e_values: tuple = ()
    deviations: tuple = ()


@dataclass(frozen=True)
class ScanSpec:
    bob_angles: tuple = (0.0, 90.0, 45.0, 135.0)
    alice_angles: tuple = tuple(11.25 * k for k in range(16))
    weighted: bool = False
    convention: str = "full"
    compare_background: dict | None = None


@dataclass(frozen=True)
class QkdSpec:
    protocol: QkdConfig = field(default_factory=QkdConfig)
    placement: str = "inline"
    convention: str = "full"


@dataclass(frozen=True)
class Scenario:
    name: str
    experiment: str
    seed: int
    report_dir: Path
    link: LinkConfig
    bell: BellSpec | None = None
    scan: ScanSpec | None = None
    qkd: QkdSpec | None = None
    source: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: int | None = None, duration: float | None = None) -> "Scenario":
        """Re-parse with CLI overrides applied so validation runs again."""
        src = json.loads(json.dumps(self.source))
        if seed is not None:
            src["seed"] = seed
        if duration is not None:
            src.setdefault("link", {})["duration"] = duration
        return parse_scenario(src)


def _num(d: dict, key: str, where: str, default=None, lo=None, hi=None, integer=False):
    value = d.get(key, default)
    name = f"{where}.{key}" if where else key
    if value is None:
        raise ScenarioError(name, "is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(name, f"must be a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        raise ScenarioError(name, "must be an integer")
    if not math.isfinite(value):
        raise ScenarioError(name, "must be finite")
    if lo is not None and value < lo:
        raise ScenarioError(name, f"must be >= {lo}")
    if hi is not None and value > hi:
        raise ScenarioError(name, f"must be <= {hi}")
    return int(value) if integer else float(value)


def _choice(d: dict, key: str, where: str, options, default):
    value = d.get(key, default)
    if value not in options:
        raise ScenarioError(f"{where}.{key}", f"must be one of {list(options)}, got {value!r}")
    return value


def _bool(d: dict, key: str, where: str, default: bool) -> bool:
    value = d.get(key, default)
    if not isinstance(value, bool):
        raise ScenarioError(f"{where}.{key}", "must be true or false")
    return value


def _angles(value, name: str) -> tuple:
    if isinstance(value, dict):
        start = _num(value, "start", name, 0.0)
        step = _num(value, "step", name)
        count = _num(value, "count", name, integer=True, lo=1)
        if step == 0:
            raise ScenarioError(f"{name}.step", "must be nonzero")
        return tuple(float(start + step * k) for k in range(count))
    if not isinstance(value, list) or not value:
        raise ScenarioError(name, "must be a nonempty list of angles or {start, step, count}")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioError(name, f"bad angle {v!r}")
    return tuple(float(v) for v in value)


def _analyzer(value, name: str, default: AnalyzerSetting) -> AnalyzerSetting:
    if value is None:
        return default
    if not isinstance(value, dict):
        raise ScenarioError(name, "must be an object")
    angles = _angles(value.get("basis_angles", list(default.basis_angles)), f"{name}.basis_angles")
    if len(angles) != 2:
        raise ScenarioError(f"{name}.basis_angles", "needs exactly two angles")
    ratio = _num(value, "splitter_ratio", name, default.splitter_ratio, 0.0, 1.0)
    try:
        return AnalyzerSetting(angles, ratio)
    except ValueError as exc:
        raise ScenarioError(name, str(exc)) from exc


_LINK_NUMBERS = {
    "pair_rate": (0, None),
    "arm_efficiency_alice": (0, 1),
    "arm_efficiency_bob": (0, 1),
    "background_rate_alice": (0, None),
    "background_rate_bob": (0, None),
    "sync_pulse_rate": (None, None),
    "jitter_sigma": (0, None),
    "window": (None, None),
    "path_delay_alice": (0, None),
    "path_delay_bob": (0, None),
    "duration": (None, None),
}


def parse_link(d: dict) -> LinkConfig:
    if not isinstance(d, dict):
        raise ScenarioError("link", "must be an object")
    known = {f.name for f in fields(LinkConfig)} - {"seed"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ScenarioError("link", f"unknown fields {unknown}")
    base = LinkConfig()
    kw = {}
    for key, (lo, hi) in _LINK_NUMBERS.items():
        if key in d:
            kw[key] = _num(d, key, "link", lo=lo, hi=hi)
    for key in ("sync_pulse_rate", "window", "duration"):
        if key in kw and kw[key] <= 0:
            raise ScenarioError(f"link.{key}", "must be > 0")
    for key in ("coupler_efficiencies_alice", "coupler_efficiencies_bob"):
        if key in d:
            v = d[key]
            if not isinstance(v, list) or len(v) != 4:
                raise ScenarioError(f"link.{key}", "must be a list of four fractions")
            kw[key] = tuple(_num({"x": x}, "x", f"link.{key}", lo=0, hi=1) for x in v)
    if "visibility" in d:
        v = d["visibility"]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            kw["visibility"] = VisibilityModel.uniform(_num(d, "visibility", "link", lo=0, hi=1))
        elif isinstance(v, dict):
            kw["visibility"] = VisibilityModel(
                _num(v, "v_hv", "link.visibility", lo=0, hi=1),
                _num(v, "v_diag", "link.visibility", lo=0, hi=1),
            )
        else:
            raise ScenarioError("link.visibility", "must be a number or {v_hv, v_diag}")
    kw["settings_alice"] = _analyzer(d.get("settings_alice"), "link.settings_alice", base.settings_alice)
    kw["settings_bob"] = _analyzer(d.get("settings_bob"), "link.settings_bob", base.settings_bob)
    try:
        return LinkConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError("link", str(exc)) from exc


def _section(src: dict, key: str) -> dict:
    value = src.get(key, {})
    if not isinstance(value, dict):
        raise ScenarioError(key, "must be an object")
    return value


def _parse_bell(d: dict) -> BellSpec:
    mode = _choice(d, "mode", "bell", ("simulate", "published"), "simulate")
    if mode == "published":
        e = d.get("e_values")
        s = d.get("deviations")
        if e is None and s is None:
            from .bell import TABLE1_DEVIATIONS, TABLE1_VALUES

            e, s = list(TABLE1_VALUES), list(TABLE1_DEVIATIONS)
        for name, vals in (("e_values", e), ("deviations", s)):
            if not isinstance(vals, list) or len(vals) != 4:
                raise ScenarioError(f"bell.{name}", "needs four numbers")
        return BellSpec(
            mode,
            e_values=tuple(_num({"x": x}, "x", "bell.e_values", lo=-1, hi=1) for x in e),
            deviations=tuple(_num({"x": x}, "x", "bell.deviations", lo=0) for x in s),
        )
    return BellSpec(
        mode,
        runs=_num(d, "runs", "bell", 1, lo=1, hi=1000, integer=True),
        normalize=_bool(d, "normalize", "bell", True),
        convention=_choice(d, "convention", "bell", CONVENTIONS, "full"),
    )


def _parse_scan(d: dict) -> ScanSpec:
    base = ScanSpec()
    alice = _angles(d.get("alice_angles", list(base.alice_angles)), "scan.alice_angles")
    if len(alice) < 8:
        raise ScenarioError("scan.alice_angles", "a fringe needs at least 8 angles")
    compare = d.get("compare_background")
    if compare is not None:
        if not isinstance(compare, dict) or not compare:
            raise ScenarioError("scan.compare_background", "must be an object of link overrides")
        for key in compare:
            if key not in ("background_rate_alice", "background_rate_bob"):
                raise ScenarioError("scan.compare_background", f"unsupported field {key!r}")
            _num(compare, key, "scan.compare_background", lo=0)
    return ScanSpec(
        _angles(d.get("bob_angles", list(base.bob_angles)), "scan.bob_angles"),
        alice,
        _bool(d, "weighted", "scan", False),
        _choice(d, "convention", "scan", CONVENTIONS, "full"),
        compare,
    )


def _parse_qkd(d: dict) -> QkdSpec:
    base = QkdConfig()
    block = d.get("block_size")
    try:
        proto = QkdConfig(
            sample_fraction=_num(d, "sample_fraction", "qkd", base.sample_fraction),
            abort_qber=_num(d, "abort_qber", "qkd", base.abort_qber),
            passes=_num(d, "passes", "qkd", base.passes, lo=1, integer=True),
            block_size=None if block is None else _num(d, "block_size", "qkd", lo=1, integer=True),
            epsilon=_num(d, "epsilon", "qkd", base.epsilon),
            pa_mode=_choice(d, "pa_mode", "qkd", PA_MODES, base.pa_mode),
            balance=_bool(d, "balance", "qkd", base.balance),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("qkd", str(exc)) from exc
    return QkdSpec(
        proto,
        _choice(d, "placement", "qkd", PLACEMENTS, "inline"),
        _choice(d, "convention", "qkd", CONVENTIONS, "full"),
    )


_TOP = {"name", "experiment", "seed", "report_dir", "link", "bell", "scan", "qkd", "description"}


def parse_scenario(src: dict, base_dir: Path | None = None) -> Scenario:
    if not isinstance(src, dict):
        raise ScenarioError("scenario", "must be a JSON object")
    unknown = sorted(set(src) - _TOP)
    if unknown:
        raise ScenarioError("scenario", f"unknown fields {unknown}")
    name = src.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", "must be a nonempty string")
    experiment = _choice(src, "experiment", "scenario", EXPERIMENTS, None)
    seed = _num(src, "seed", "", 0, lo=0, hi=2**63 - 1, integer=True)
    link_src = _section(src, "link")
    if "duration" in link_src and link_src["duration"] in (0, None, ""):
        raise ScenarioError("link.duration", "must be > 0")
    link = parse_link(link_src).with_(seed=seed)
    report_dir = src.get("report_dir", f"reports/{name}")
    if not isinstance(report_dir, str) or not report_dir:
        raise ScenarioError("report_dir", "must be a nonempty path")
    bell = _parse_bell(_section(src, "bell")) if experiment == "bell_test" else None
    scan = _parse_scan(_section(src, "scan")) if experiment == "visibility_scan" else None
    qkd = _parse_qkd(_section(src, "qkd")) if experiment == "qkd_session" else None
    return Scenario(name, experiment, seed, Path(report_dir), link, bell, scan, qkd, src)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError("path", f"cannot read {path}: {exc.strerror}") from exc
    try:
        src = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("json", f"line {exc.lineno}: {exc.msg}") from exc
    return parse_scenario(src)


def bundled_scenarios() -> dict[str, Path]:
    here = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(here.glob("*.scenario"))}


def resolve_scenario(ref: str) -> Path:
    """A path, or the stem of a bundled scenario such as ``table1``."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    stem = p.name.removesuffix(".scenario").removesuffix(".json")
    if stem in bundled:
        return bundled[stem]
    return p
