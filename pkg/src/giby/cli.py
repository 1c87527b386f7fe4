"""Command-line entry point: train, test, eval, gen and bench subcommands.

Exit codes: 0 clean run, 1 anomalies found by ``test``, 2 missing input
file, 3 invalid configuration or malformed input.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import random
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

from . import store as store_io
from .core import BoundStore, Verdict, render_explanation
from .data_model import DatasetParseError, RecordReader, RelationshipGraph, parse_dataset
from .detector import DETECTORS, Detector, train
from .extended import DEFAULT_WINDOWS, ExtendedStore
from .metrics import EvalUnit, Policy, evaluate, units_from_manifest, units_from_records
from .synthgen import (AttackSpec, DetectabilityOracle, PlantScenario, generate_normal, inject_attacks,
                       manifest_json, plan_stealth_ramp, plant_graph)

log = logging.getLogger("giby")

EXIT_OK, EXIT_ANOMALY, EXIT_MISSING, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _csv_list(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class RunConfig:
    """Everything one subcommand run needs, validated before any work starts."""

    normal: Optional[Path] = None
    attack: Optional[Path] = None
    graph: Optional[Path] = None
    sensors: Optional[List[str]] = None
    kinds: Tuple[str, ...] = DETECTORS
    windows: Tuple[int, ...] = DEFAULT_WINDOWS
    quantize: Optional[int] = None
    store: Optional[Path] = None
    out: Optional[Path] = None
    epsilon: float = 0.0
    emit_all: bool = False
    policy: Optional[str] = None
    promote_warnings: Optional[Path] = None
    windows_given: bool = False
    extra: Dict[str, object] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not self.kinds:
            raise ConfigError("select at least one detector kind")
        bad = [k for k in self.kinds if k not in DETECTORS]
        if bad:
            raise ConfigError(f"unknown detector kinds {bad}; choose from {', '.join(DETECTORS)}")
        if not self.windows or any(w <= 0 for w in self.windows):
            raise ConfigError("window lengths must be positive")
        if len(set(self.windows)) != len(self.windows):
            raise ConfigError("window lengths must be distinct")
        if self.quantize is not None and self.quantize < 0:
            raise ConfigError("--quantize must be >= 0")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError("--epsilon must be a finite non-negative number")
        if self.policy is not None and self.policy not in ("both", *(p.value for p in Policy)):
            raise ConfigError(f"unknown policy {self.policy}")
        return self

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        def path(name):
            v = getattr(ns, name, None)
            return Path(v) if v else None

        try:
            windows = tuple(int(w) for w in _csv_list(ns.windows)) if getattr(ns, "windows", None) else None
        except ValueError:
            raise ConfigError(f"--windows must be comma-separated integers, got {ns.windows!r}") from None
        kinds = tuple(_csv_list(ns.kinds)) if getattr(ns, "kinds", None) is not None else DETECTORS
        return cls(
            normal=path("normal"), attack=path("attack"), graph=path("graph"),
            sensors=_csv_list(getattr(ns, "sensors", None)), kinds=kinds,
            windows=windows or DEFAULT_WINDOWS, quantize=getattr(ns, "quantize", None),
            store=path("store"), out=path("out"), epsilon=getattr(ns, "epsilon", 0.0) or 0.0,
            emit_all=bool(getattr(ns, "emit_all", False)), policy=getattr(ns, "policy", None),
            promote_warnings=path("promote_warnings"), windows_given=windows is not None,
        ).validate()


def _need(path: Optional[Path], flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    if not path.exists():
        raise FileNotFoundError(f"{flag}: no such file {path}")
    return path


def _load_graph(cfg: RunConfig) -> RelationshipGraph:
    return RelationshipGraph.load(_need(cfg.graph, "--graph"))


def _check_sensors(cfg: RunConfig, graph: RelationshipGraph) -> Optional[List[str]]:
    if cfg.sensors is None:
        return None
    unknown = [s for s in cfg.sensors if s not in graph.neighbors]
    if unknown:
        raise ConfigError(f"sensors not in graph: {unknown}")
    return cfg.sensors


def _read_verdicts(path: Path) -> List[Verdict]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(Verdict.from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise ConfigError(f"{path}:{n}: not a verdict record ({exc})") from None
    return out


def _percentile(sorted_vals: Sequence[float], q: float) -> float:
    if not sorted_vals:
        return math.nan
    k = min(len(sorted_vals) - 1, max(0, math.ceil(q / 100 * len(sorted_vals)) - 1))
    return sorted_vals[k]


class LatencyReservoir:
    """Exact mean plus percentiles from a fixed-size uniform sample."""

    def __init__(self, size: int = 20000, seed: int = 0):
        self.size = size
        self.count = 0
        self.total = 0.0
        self._sample: List[float] = []
        self._rng = random.Random(seed)

    def add(self, x: float) -> None:
        self.count += 1
        self.total += x
        if len(self._sample) < self.size:
            self._sample.append(x)
        else:
            j = self._rng.randrange(self.count)
            if j < self.size:
                self._sample[j] = x

    def summary(self, scale: float = 1.0) -> Dict[str, float]:
        s = sorted(self._sample)
        mean = self.total / self.count if self.count else math.nan
        return {"mean": mean * scale, "p50": _percentile(s, 50) * scale,
                "p99": _percentile(s, 99) * scale, "max": (s[-1] if s else math.nan) * scale}


def cmd_train(cfg: RunConfig, stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    graph = _load_graph(cfg)
    dataset = parse_dataset(_need(cfg.normal, "--normal"), graph=graph)
    if cfg.store is None:
        raise ConfigError("--store is required")
    sensors = _check_sensors(cfg, graph)
    result = train(dataset, graph, sensors, cfg.kinds, cfg.windows, cfg.quantize)
    core = result.core
    if cfg.promote_warnings is not None:
        reviewed = _read_verdicts(_need(cfg.promote_warnings, "--promote-warnings"))
        core = core.promote(reviewed)
        print(f"promoted {len(reviewed)} reviewed verdicts into the core bounds", file=stdout)
    store_io.save(cfg.store, core, result.extended, store_io.dataset_digest(dataset))
    print(f"trained {len(result.seconds)} sensors on {len(dataset)} records -> {cfg.store}", file=stdout)
    print(f"{'sensor':<12}{'states':>8}{'seconds':>12}", file=stdout)
    for s, sec in result.seconds.items():
        states = len({e.sb for e in core if e.sensor == s})
        print(f"{s:<12}{states:>8}{sec:>12.4f}", file=stdout)
    for e in core.weakly_trained(2):
        log.warning("state %s of %s trained on %d sample(s)", e.sb, e.sensor, e.sample_count)
    return EXIT_OK


def _detector_for(cfg: RunConfig, graph: RelationshipGraph) -> Detector:
    core, extended, _ = store_io.load(_need(cfg.store, "--store"))
    if "extended" in cfg.kinds and extended is None:
        raise ConfigError("store has no extended detector; retrain with --kinds including extended")
    windows = None
    if extended is not None and cfg.windows_given:
        missing = [w for w in cfg.windows if w not in extended.window_lens]
        if missing:
            raise ConfigError(f"store has no window bounds for lengths {missing}")
        windows = cfg.windows
    sensors = _check_sensors(cfg, graph)
    if sensors is None:
        sensors = [s for s in graph.sensors if graph.neighbors[s] and s in core.sensors()]
    return Detector(graph, core, extended if "extended" in cfg.kinds else None, sensors, cfg.kinds,
                    windows, cfg.epsilon)


def cmd_test(cfg: RunConfig, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    """Stream the test CSV through the detector and write JSONL verdicts."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    graph = _load_graph(cfg)
    attack = _need(cfg.attack, "--attack")
    det = _detector_for(cfg, graph)
    lat = LatencyReservoir()
    n_records = n_anom = 0
    per_detector: Dict[str, int] = {}
    sink = cfg.out.open("w", encoding="utf-8", newline="\n") if cfg.out else stdout
    try:
        with attack.open(encoding="utf-8", newline="") as fh:
            reader = RecordReader(fh, graph=graph)
            absent = [s for s in det.sensors if s not in reader.schema.columns]
            if absent:
                raise ConfigError(f"test data lacks sensors {absent}")
            clock = time.perf_counter
            for rec in reader:
                t0 = clock()
                verdicts = det.check(rec.index, rec.values)
                lat.add(clock() - t0)
                n_records += 1
                for v in verdicts:
                    if v.anomalous:
                        n_anom += 1
                        per_detector[v.detector] = per_detector.get(v.detector, 0) + 1
                    if v.anomalous or cfg.emit_all:
                        sink.write(json.dumps(render_explanation(v)[1], sort_keys=True) + "\n")
    finally:
        if cfg.out:
            sink.close()
    per_sensor = 1e3 / max(1, len(det.sensors))
    stats = lat.summary(per_sensor)
    print(f"records {n_records}  sensors {len(det.sensors)}  anomalous verdicts {n_anom}", file=stderr)
    for d, c in sorted(per_detector.items()):
        print(f"  {d:<16}{c}", file=stderr)
    print("latency per record per sensor (ms): "
          + "  ".join(f"{k}={v:.4f}" for k, v in stats.items()), file=stderr)
    return EXIT_ANOMALY if n_anom else EXIT_OK


def _units_from_fixture(path: Path) -> List[EvalUnit]:
    data = json.loads(path.read_text(encoding="utf-8"))
    rows = data["units"] if isinstance(data, dict) else data
    try:
        return [EvalUnit(str(r["unit_id"]), bool(r["is_attack"]), r.get("detected_by"),
                         bool(r.get("within_bounds", False)), bool(r.get("has_training_data", True)))
                for r in rows]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed unit ({exc})") from None


def cmd_eval(cfg: RunConfig, stdout: Optional[TextIO] = None) -> int:
    """Score detections under both policies (or the one named by ``--policy``)."""
    stdout = stdout or sys.stdout
    units_path = cfg.extra.get("units")
    manifest_path = cfg.extra.get("manifest")
    if units_path:
        units = _units_from_fixture(_need(Path(units_path), "--units"))
    else:
        verdicts = _read_verdicts(_need(Path(cfg.extra["verdicts"]) if cfg.extra.get("verdicts") else None,
                                        "--verdicts"))
        if manifest_path:
            manifest = json.loads(_need(Path(manifest_path), "--manifest").read_text(encoding="utf-8"))
            units = units_from_manifest(verdicts, manifest)
        elif cfg.attack is not None:
            graph = _load_graph(cfg) if cfg.graph else None
            data = parse_dataset(_need(cfg.attack, "--attack"), graph=graph)
            if not data.labeled:
                raise ConfigError("--attack data has no Label column")
            units = units_from_records(verdicts, data)
        else:
            raise ConfigError("eval needs --units, --manifest or a labelled --attack file")
    policies = list(Policy) if cfg.policy in (None, "both") else [Policy(cfg.policy)]
    reports = {p.value: evaluate(units, p) for p in policies}
    for i, rep in enumerate(reports.values()):
        if i:
            print("", file=stdout)
        # Per-unit detections go to --out; the console gets the scores.
        print(rep.to_text().split("\n\n")[0], file=stdout)
    if cfg.out:
        cfg.out.write_text(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2, sort_keys=True)
                           + "\n", encoding="utf-8")
    return EXIT_OK


def load_scenario(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    data = json.loads(_need(path, "--scenario").read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError("scenario file must hold a JSON object")
    return data


def generate(scenario: dict) -> Tuple:
    """Normal trace, attacked trace, manifest and graph for a scenario mapping.

    Keys: ``plant`` (:class:`PlantScenario` fields), ``attacks`` (list of
    :class:`AttackSpec` fields), ``stealth_ramp`` (``target``, ``delta``,
    ``tsteps``), ``windows`` and ``quantize`` for the detectability oracle.
    Attacks are injected into a copy of the normal trace.
    """
    try:
        plant = PlantScenario.from_dict(scenario.get("plant", {}))
        specs = [AttackSpec.from_dict(a) for a in scenario.get("attacks", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    graph = plant_graph()
    normal = generate_normal(plant)
    oracle = DetectabilityOracle(normal, graph, tuple(scenario.get("windows", DEFAULT_WINDOWS)),
                                 scenario.get("quantize"))
    ramp = scenario.get("stealth_ramp")
    if ramp:
        spec = plan_stealth_ramp(normal, graph, ramp.get("target", "LIT101"), float(ramp.get("delta", 0.01)),
                                 int(ramp.get("tsteps", 200)), oracle, others=specs)
        if spec is None:
            warnings.warn("no launch point keeps the ramp below every detector; ramp omitted")
        else:
            specs.append(spec)
    try:
        attacked, manifest = inject_attacks(normal, specs, graph, oracle=oracle)
    except ValueError as exc:
        raise ConfigError(f"invalid attacks: {exc}") from None
    return normal, attacked, manifest, graph


def cmd_gen(cfg: RunConfig, stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    raw = cfg.extra.get("scenario")
    scenario = load_scenario(Path(raw) if raw else None)
    if cfg.out is None:
        raise ConfigError("--out directory is required")
    normal, attacked, manifest, graph = generate(scenario)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with (cfg.out / "normal.csv").open("w", encoding="utf-8", newline="") as fh:
        normal.to_csv(fh)
    with (cfg.out / "attack.csv").open("w", encoding="utf-8", newline="") as fh:
        attacked.to_csv(fh)
    (cfg.out / "manifest.json").write_text(manifest_json(manifest), encoding="utf-8")
    (cfg.out / "graph.ini").write_text(graph.to_config(), encoding="utf-8")
    print(f"wrote {len(normal)} records and {len(manifest['attacks'])} attacks to {cfg.out}", file=stdout)
    for a in manifest["attacks"]:
        print(f"  {a['id']:<16}{a['kind']:<18}{a['target']:<8}{a['start']:>7}-{a['end']:<7}{a['expected']}",
              file=stdout)
    return EXIT_OK


def bench(records: int = 100_000, seed: int = 0, kinds: Sequence[str] = DETECTORS,
          windows: Sequence[int] = DEFAULT_WINDOWS) -> Dict[str, Dict[str, float]]:
    """Per-record, per-sensor test latency in milliseconds on a replayed plant trace.

    Reports the core step (giant and baby) alone and, when selected, the full
    step including extended window maintenance.
    """
    data = generate_normal(PlantScenario(seed=seed, duration=records))
    graph = plant_graph()
    result = train(data, graph, detectors=kinds, window_lens=windows)
    cols = {c: data.columns[c].tolist() for c in data.schema.columns}
    index = data.index.tolist()
    rows = [{c: cols[c][i] for c in cols} for i in range(len(index))]
    runs = {"core": Detector(graph, result.core, None, detectors=[k for k in kinds if k != "extended"])}
    if "extended" in kinds:
        runs["core+extended"] = Detector(graph, result.core, result.extended, detectors=kinds)
    report = {}
    clock = time.perf_counter
    for name, det in runs.items():
        if not det.kinds and det.monitor is None:
            continue
        lat = LatencyReservoir()
        anomalies = 0
        for t, row in zip(index, rows):
            t0 = clock()
            vs = det.check(t, row)
            lat.add(clock() - t0)
            anomalies += sum(v.anomalous for v in vs)
        stats = lat.summary(1e3 / len(det.sensors))
        stats["records"] = len(index)
        stats["sensors"] = len(det.sensors)
        stats["anomalies"] = anomalies
        report[name] = stats
    return report


def cmd_bench(cfg: RunConfig, stdout: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    records = int(cfg.extra.get("records", 100_000))
    if records < 2:
        raise ConfigError("--records must be at least 2")
    report = bench(records, int(cfg.extra.get("seed", 0)), cfg.kinds, cfg.windows)
    print(f"{'step':<16}{'records':>9}{'mean ms':>10}{'p99 ms':>10}{'max ms':>10}", file=stdout)
    for name, s in report.items():
        print(f"{name:<16}{s['records']:>9}{s['mean']:>10.4f}{s['p99']:>10.4f}{s['max']:>10.4f}", file=stdout)
    if cfg.out:
        cfg.out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="giby", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, kinds=True):
        sp.add_argument("--graph", help="relationship graph config (INI)")
        sp.add_argument("--sensors", help="comma-separated sensors to process (default: all in graph)")
        if kinds:
            sp.add_argument("--kinds", help="comma-separated detectors: giant,baby,extended (default: all)")
            sp.add_argument("--windows", help="comma-separated window lengths (default: 5,10,25,50,100)")

    sp = sub.add_parser("train", help="learn bounds from normal data")
    common(sp)
    sp.add_argument("--normal", help="normal (training) CSV")
    sp.add_argument("--store", help="bound store file to write")
    sp.add_argument("--quantize", type=int, help="round readings to this many decimals for frequency tables")
    sp.add_argument("--promote-warnings", help="JSONL of reviewed false-positive verdicts to accept as normal")

    sp = sub.add_parser("test", help="check records against a trained store")
    common(sp)
    sp.add_argument("--attack", help="test CSV")
    sp.add_argument("--store", help="bound store file")
    sp.add_argument("--out", help="JSONL verdict file (default: stdout)")
    sp.add_argument("--epsilon", type=float, default=0.0, help="tolerance added around core bounds")
    sp.add_argument("--emit-all", action="store_true", help="write every verdict, not only anomalies")

    sp = sub.add_parser("eval", help="score detections against ground truth")
    sp.add_argument("--verdicts", help="JSONL verdicts from `giby test`")
    sp.add_argument("--manifest", help="attack manifest JSON (one unit per attack)")
    sp.add_argument("--attack", help="labelled test CSV (one unit per record)")
    sp.add_argument("--graph", help="relationship graph config, used to parse --attack")
    sp.add_argument("--units", help="JSON list of pre-scored units")
    sp.add_argument("--policy", choices=["both", *(x.value for x in Policy)], default="both")
    sp.add_argument("--out", help="write the reports as JSON")

    sp = sub.add_parser("gen", help="generate a synthetic plant trace with attacks")
    sp.add_argument("--scenario", help="scenario JSON (default: built-in plant, no attacks)")
    sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("bench", help="measure per-record test latency")
    sp.add_argument("--records", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--kinds", help="comma-separated detectors (default: all)")
    sp.add_argument("--windows", help="comma-separated window lengths")
    sp.add_argument("--out", help="write the latency report as JSON")
    return p


COMMANDS = {"train": cmd_train, "test": cmd_test, "eval": cmd_eval, "gen": cmd_gen, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for missing files.
        return EXIT_CONFIG if exc.code == 2 else int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_args(ns)
        for key in ("verdicts", "manifest", "units", "scenario", "records", "seed"):
            if getattr(ns, key, None) is not None:
                cfg.extra[key] = getattr(ns, key)
        return COMMANDS[ns.command](cfg)
    except FileNotFoundError as exc:
        print(f"giby: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, DatasetParseError, store_io.StoreFormatError, configparser.Error,
            json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"giby: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
