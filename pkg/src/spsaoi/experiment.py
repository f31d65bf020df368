"""Experiment runner: binds a config file to simulation, analytic evaluation,
comparison, validation, sweep and oracle workflows, and writes CSV/JSON bundles.

Every bundle directory ends with a ``manifest.json`` listing each file with
its SHA-256 and the effective configuration.  CSV files are deterministic
given the seeds; timings only go to JSON.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .aoi import empirical_aoi_pmf, reservation_statistics
from .analytic import AnalyticModel, aoi_metrics
from .config import AnalyticParams, ConfigError, SystemConfig
from .pmf import Pmf, max_cdf_gap, total_variation, write_columns
from .simulator import run_simulation, write_trace_dump
from .validation import (assumption_distance, brute_force_stationary, exact_aoi_small,
                         exact_empty_slot_pmf, study_nodes)

MODES = ("simulate", "analytic", "compare", "validate", "sweep", "oracle")
FORMATS = ("csv", "json")
TAIL_EPS = 1e-12
AXIS_ALIASES = {"p_E": "ending_prob", "ending_prob": "ending_prob", "V": "num_nodes",
                "num_nodes": "num_nodes", "m": "frame_size", "frame_size": "frame_size"}
SYSTEM_ALIASES = {"V": "num_nodes", "m": "frame_size", "p_E": "ending_prob"}


class OutputError(OSError):
    """Output directory or file not writable."""


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    values: tuple
    systems: tuple = ()  # optional (V, m) pairs crossed with the values
    simulate: bool = True


@dataclass(frozen=True)
class ValidateSection:
    frame_sizes: tuple = (20, 50, 100, 200)
    load: float = 0.65
    ending_prob: float = 0.1
    replications: int = 1


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    system: SystemConfig | None
    analytic: dict = field(default_factory=dict)
    theta: int = 400
    output_dir: Path = Path("results")
    formats: tuple = FORMATS
    pool: bool = True
    threads: int = 1
    dump_trace: bool = False
    sweep: SweepAxis | None = None
    validate: ValidateSection = field(default_factory=ValidateSection)
    oracle_cap: int | None = None
    oracle_simulate: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.theta) != self.theta or self.theta < 0:
            raise ConfigError("theta must be a nonnegative integer")
        if not self.formats or set(self.formats) - set(FORMATS):
            raise ConfigError(f"formats must be a nonempty subset of {FORMATS}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.mode != "validate" and self.system is None:
            raise ConfigError(f"{self.mode} mode needs a system section")
        if self.mode == "sweep" and self.sweep is None:
            raise ConfigError("sweep mode needs a sweep section")
        # fail before any compute
        for system in self.points():
            self.analytic_params(system)

    @classmethod
    def from_mapping(cls, data: dict) -> ExperimentSpec:
        data = dict(data or {})
        known = {"mode", "system", "analytic", "theta", "output_dir", "formats", "pool", "threads",
                 "dump_trace", "sweep", "validate", "oracle"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        system = None
        if data.get("system") is not None:
            raw = {SYSTEM_ALIASES.get(k, k): v for k, v in dict(data["system"]).items()}
            missing = {"num_nodes", "frame_size", "ending_prob"} - set(raw)
            if missing:
                raise ConfigError(f"system section lacks {sorted(missing)}")
            system = SystemConfig.from_mapping(raw)
        sweep = None
        if data.get("sweep") is not None:
            s = dict(data["sweep"])
            param = AXIS_ALIASES.get(s.get("parameter", "ending_prob"))
            if param is None:
                raise ConfigError(f"sweep parameter must be one of {sorted(AXIS_ALIASES)}")
            values = tuple(s.get("values") or ())
            if not values:
                raise ConfigError("sweep needs a nonempty values list")
            systems = tuple(tuple(int(x) for x in pair) for pair in s.get("systems") or ())
            sweep = SweepAxis(param, values, systems, bool(s.get("simulate", True)))
        v = dict(data.get("validate") or {})
        if "ending_prob" not in v and system is not None:
            v["ending_prob"] = system.ending_prob
        if "frame_sizes" in v:
            v["frame_sizes"] = tuple(int(x) for x in v["frame_sizes"])
        validate = ValidateSection(**v)
        oracle = dict(data.get("oracle") or {})
        formats = data.get("formats", FORMATS)
        if isinstance(formats, str):
            formats = tuple(f.strip() for f in formats.split(",") if f.strip())
        analytic = dict(data.get("analytic") or {})
        if isinstance(analytic.get("empty_slot_pmf"), dict):
            analytic["empty_slot_pmf"] = Pmf.from_dict(analytic["empty_slot_pmf"])
        return cls(
            mode=data.get("mode", "compare"),
            system=system,
            analytic=analytic,
            theta=int(data.get("theta", 400)),
            output_dir=Path(data.get("output_dir", "results")),
            formats=tuple(formats),
            pool=bool(data.get("pool", True)),
            threads=int(data.get("threads", 1)),
            dump_trace=bool(data.get("dump_trace", False)),
            sweep=sweep,
            validate=validate,
            oracle_cap=oracle.get("cap"),
            oracle_simulate=bool(oracle.get("simulate", True)),
        )

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> ExperimentSpec:
        return cls.from_mapping(merge_overrides(load_yaml(path), overrides or {}))

    def analytic_params(self, system: SystemConfig, **extra) -> AnalyticParams:
        kw = {**self.analytic, **extra}
        if kw.get("empty_slot_model") == "empirical":
            # placeholder until the simulated histogram is known
            kw = {**kw, "empty_slot_model": "explicit",
                  "empty_slot_pmf": kw.get("empty_slot_pmf") or Pmf.delta(system.frame_size)}
        try:
            return AnalyticParams.for_system(system, **kw)
        except TypeError as exc:
            raise ConfigError(f"bad analytic section: {exc}") from None

    def points(self) -> list:
        if self.system is None:
            return []
        if self.mode != "sweep":
            return [self.system]
        pairs = self.sweep.systems or ((self.system.num_nodes, self.system.frame_size),)
        out = []
        for k, (V, m) in enumerate(pairs):
            for value in self.sweep.values:
                cfg = {"num_nodes": V, "frame_size": m, self.sweep.parameter: value}
                out.append(self.system.with_(**cfg))
        return [p.with_(seed=self.system.seed + i) for i, p in enumerate(out)]

    def effective(self) -> dict:
        d = {
            "mode": self.mode,
            "system": self.system.to_dict() if self.system else None,
            "analytic": {k: (v.to_dict() if isinstance(v, Pmf) else v) for k, v in self.analytic.items()},
            "theta": self.theta,
            "output_dir": str(self.output_dir),
            "formats": list(self.formats),
            "pool": self.pool,
            "threads": self.threads,
            "dump_trace": self.dump_trace,
        }
        if self.sweep:
            d["sweep"] = {"parameter": self.sweep.parameter, "values": list(self.sweep.values),
                          "systems": [list(p) for p in self.sweep.systems],
                          "simulate": self.sweep.simulate}
        if self.mode == "validate":
            v = self.validate
            d["validate"] = {"frame_sizes": list(v.frame_sizes), "load": v.load,
                             "ending_prob": v.ending_prob, "replications": v.replications}
        if self.mode == "oracle":
            d["oracle"] = {"cap": self.oracle_cap, "simulate": self.oracle_simulate}
        return d


def load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def merge_overrides(data: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides (``system.seed``) onto a nested mapping."""
    data = json.loads(json.dumps(data, default=str)) if data else {}
    for key, value in overrides.items():
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in SYSTEM_ALIASES:
            parts = ["system", parts[0]]
        node = data
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(f"cannot set {key}: {p} is not a section")
            node = nxt
        node[parts[-1]] = value
    return data


def cut_tail(pmf: Pmf, eps: float = TAIL_EPS) -> Pmf:
    """Drop the trailing points whose remaining mass is below ``eps``."""
    w = pmf.weights
    if len(w) == 0:
        return pmf
    remaining = np.cumsum(w[::-1])[::-1]
    keep = np.flatnonzero(remaining >= eps)
    end = int(keep[-1]) + 1 if keep.size else 1
    return Pmf(pmf.offset, w[:end])


@dataclass
class PointResult:
    system: SystemConfig
    info: dict
    analytic_pmf: Pmf | None = None
    sim_pmf: Pmf | None = None
    empty_slots: Pmf | None = None
    fixed_point: tuple = ()


def evaluate_point(spec: ExperimentSpec, system: SystemConfig, simulate: bool, analytic: bool,
                   point_dir: Path | None = None) -> PointResult:
    """Simulate and/or evaluate the analytic model at one system point."""
    info = {"system": system.to_dict(), "seed": system.seed, "theta": spec.theta}
    res = PointResult(system, info)
    sim_full = None
    if simulate:
        t0 = time.perf_counter()
        traces = run_simulation(system)
        emp = empirical_aoi_pmf(traces, pool=spec.pool)
        stats = reservation_statistics(traces, pool=spec.pool)
        sim_full = emp.averaged
        m_sim = aoi_metrics(sim_full, spec.theta)
        res.empty_slots = Pmf.from_samples(traces.empty_count)
        info["simulation"] = {
            "mean_aoi": m_sim.mean, "psi": m_sim.violation, "mass": m_sim.mass,
            "renormalized": m_sim.renormalized, "censored_fraction": emp.censored_fraction,
            "pooled": emp.pooled, "nodes": len(emp.nodes), "slots_observed": emp.slots_observed,
            "empty_slots_mean": float(np.mean(traces.empty_count)),
            "completed_reservations": stats.completed,
            "metadata": traces.metadata,
            "wall_time_s": time.perf_counter() - t0,
        }
        if point_dir is not None and spec.dump_trace:
            write_trace_dump(traces, point_dir / "trace.bin")
        res.sim_pmf = cut_tail(sim_full)
        del traces
    if analytic:
        t0 = time.perf_counter()
        params = spec.analytic_params(system)
        if spec.analytic.get("empty_slot_model") == "empirical":
            if res.empty_slots is None:
                raise ConfigError("empirical empty-slot model needs a simulation")
            params = params.with_(empty_slot_pmf=res.empty_slots.trim())
        model = AnalyticModel(params)
        full = model.aoi_averaged
        m_an = aoi_metrics(full, spec.theta)
        sol = model.empty_slots
        info["analytic"] = {
            "params": params.to_dict(),
            "mean_aoi": m_an.mean, "psi": m_an.violation, "mass": m_an.mass,
            "renormalized": m_an.renormalized,
            "e_n": sol.e_n if sol else None,
            "fixed_point_iterations": sol.iterations if sol else None,
            "fixed_point_residual": sol.residual if sol else None,
            "truncation": model.truncation,
            "wall_time_s": time.perf_counter() - t0,
        }
        res.fixed_point = sol.trajectory if sol else ()
        res.analytic_pmf = cut_tail(full)
        if sim_full is not None:
            a, s = full.normalized(), sim_full.normalized()
            info["tv_analytic_sim"] = total_variation(a, s)
            info["max_cdf_gap"] = max_cdf_gap(a, s)
    return res


def _evaluate_job(args):
    spec, system, simulate, analytic, point_dir = args
    return evaluate_point(spec, system, simulate, analytic, point_dir)


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


class Bundle:
    """Collects written files of one output directory for the manifest."""

    def __init__(self, directory: Path, formats):
        self.dir = Path(directory)
        self.formats = set(formats)
        self.files: list = []
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.dir}: {exc}") from exc

    def _track(self, path: Path):
        self.files.append(path)
        return path

    def columns(self, name, header, columns):
        if "csv" in self.formats:
            try:
                self._track(write_columns(self.dir / name, header, columns))
            except OSError as exc:
                raise OutputError(f"cannot write {self.dir / name}: {exc}") from exc

    def pmf(self, name, pmf: Pmf, label="delta"):
        self.columns(name, (label, "pmf", "cdf"), (pmf.support.tolist(), pmf.weights, pmf.cdf()))

    def cdf(self, name, pmf: Pmf):
        self.columns(name, ("delta", "cdf"), (pmf.support.tolist(), pmf.cdf()))

    def json(self, name, data):
        if "json" in self.formats:
            path = self.dir / name
            try:
                path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n",
                                encoding="utf-8")
            except OSError as exc:
                raise OutputError(f"cannot write {path}: {exc}") from exc
            self._track(path)

    def manifest(self, effective: dict):
        entries = []
        for path in self.files:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            entries.append({"path": str(path.relative_to(self.dir)), "sha256": digest})
        data = {"effective_config": effective, "files": entries}
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n",
                        encoding="utf-8")
        return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Pmf):
        return obj.to_dict()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write_point(bundle: Bundle, res: PointResult):
    if res.sim_pmf is not None:
        bundle.pmf("aoi_pmf_sim.csv", res.sim_pmf)
        bundle.cdf("aoi_cdf_sim.csv", res.sim_pmf)
        bundle.columns("empty_slots.csv", ("n", "pmf"), (res.empty_slots.support.tolist(),
                                                           res.empty_slots.weights))
    if res.analytic_pmf is not None:
        bundle.pmf("aoi_pmf_analytic.csv", res.analytic_pmf)
        bundle.cdf("aoi_cdf_analytic.csv", res.analytic_pmf)
        if res.fixed_point:
            bundle.columns("fixed_point.csv", ("iteration", "E_N"),
                           (list(range(len(res.fixed_point))), list(res.fixed_point)))
    if res.sim_pmf is not None and res.analytic_pmf is not None:
        hi = max(res.sim_pmf.last, res.analytic_pmf.last)
        a = np.cumsum(res.analytic_pmf.padded(0, hi))
        s = np.cumsum(res.sim_pmf.padded(0, hi))
        bundle.columns("aoi_cdf.csv", ("delta", "cdf_analytic", "cdf_sim"), (list(range(hi + 1)), a, s))
    bundle.json("metrics.json", res.info)


def run(spec: ExperimentSpec) -> dict:
    """Execute ``spec`` and write its bundle(s); returns a summary dict."""
    runner = {"simulate": _run_single, "analytic": _run_single, "compare": _run_single,
              "sweep": _run_sweep, "validate": _run_validate, "oracle": _run_oracle}[spec.mode]
    return runner(spec)


def _run_single(spec: ExperimentSpec) -> dict:
    bundle = Bundle(spec.output_dir, spec.formats)
    simulate = spec.mode in ("simulate", "compare")
    analytic = spec.mode in ("analytic", "compare")
    res = evaluate_point(spec, spec.system, simulate, analytic, bundle.dir)
    if spec.dump_trace and simulate:
        bundle.files.append(bundle.dir / "trace.bin")
    _write_point(bundle, res)
    bundle.manifest(spec.effective())
    return res.info


def _run_sweep(spec: ExperimentSpec) -> dict:
    top = Bundle(spec.output_dir, spec.formats)
    points = spec.points()
    dirs = [top.dir / f"point_{i:03d}" for i in range(len(points))]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, p, spec.sweep.simulate, True, d) for p, d in zip(points, dirs)]
    results = _map(_evaluate_job, jobs, spec.threads)
    rows = []
    for res, d in zip(results, dirs):
        bundle = Bundle(d, spec.formats)
        if spec.dump_trace and spec.sweep.simulate:
            bundle.files.append(d / "trace.bin")
        _write_point(bundle, res)
        bundle.manifest({**spec.effective(), "system": res.system.to_dict()})
        top.files.extend(bundle.files + [d / "manifest.json"])
        sim = res.info.get("simulation", {})
        an = res.info["analytic"]
        rows.append((res.system.ending_prob, res.system.num_nodes, res.system.frame_size,
                     an["mean_aoi"], sim.get("mean_aoi", ""), an["psi"], sim.get("psi", "")))
    top.columns("psi_vs_pe.csv", ("p_E", "V", "m", "avg_aoi_analytic", "avg_aoi_sim", "psi_analytic",
                                  "psi_sim"), list(zip(*rows)))
    summary = {"points": [r.info for r in results]}
    top.json("metrics.json", summary)
    top.manifest(spec.effective())
    return summary


def _validate_job(args):
    m, V, p, seed, warmup, measured = args
    cfg = SystemConfig(V, m, p, seed=seed, warmup_frames=warmup, measured_frames=measured)
    return reservation_statistics(run_simulation(cfg), pool=True)


def _run_validate(spec: ExperimentSpec) -> dict:
    bundle = Bundle(spec.output_dir, spec.formats)
    v = spec.validate
    base = spec.system
    seed = base.seed if base else 0
    warmup = base.warmup_frames if base else 50_000
    measured = base.measured_frames if base else 500_000
    jobs = [(m, study_nodes(m, v.load), v.ending_prob, seed + r, warmup, measured)
            for m in v.frame_sizes for r in range(v.replications)]
    stats = _map(_validate_job, jobs, spec.threads)
    rows, report = [], []
    for i, m in enumerate(v.frame_sizes):
        merged = stats[i * v.replications]
        for s in stats[i * v.replications + 1:(i + 1) * v.replications]:
            merged = merged.merge(s)
        d = assumption_distance(merged)
        rows.append((m, v.load, d.d_collision, d.d_singleton))
        report.append({"m": m, "V": study_nodes(m, v.load), "d_collision": d.d_collision,
                       "d_singleton": d.d_singleton, "count_collision": d.count_collision,
                       "count_singleton": d.count_singleton, "low_confidence": d.low_confidence})
    bundle.columns("var_dist.csv", ("m", "load", "d_collision", "d_singleton"), list(zip(*rows)))
    summary = {"points": report, "replications": v.replications, "ending_prob": v.ending_prob}
    bundle.json("metrics.json", summary)
    bundle.manifest(spec.effective())
    return summary


def _run_oracle(spec: ExperimentSpec) -> dict:
    bundle = Bundle(spec.output_dir, spec.formats)
    system = spec.system
    chain = brute_force_stationary(system)
    exact = exact_aoi_small(system, spec.oracle_cap, chain)
    q_exact = exact_empty_slot_pmf(chain).trim()
    fixed = AnalyticModel(spec.analytic_params(system))
    with_exact_q = AnalyticModel(spec.analytic_params(system, empty_slot_model="explicit",
                                                      empty_slot_pmf=q_exact))
    columns = {"pmf_exact": exact.averaged, "pmf_analytic": fixed.aoi_averaged,
               "pmf_analytic_exact_empty": with_exact_q.aoi_averaged}
    info = {
        "system": system.to_dict(),
        "stationary_iterations": chain.iterations,
        "stationary_residual": chain.residual,
        "slot_marginal_max_deviation": float(np.abs(chain.slot_marginal.weights - 1 / system.frame_size).max()),
        "exact_deficit": exact.deficit,
        "cap": exact.cap,
        "tv_exact_analytic": total_variation(exact.averaged.normalized(), fixed.aoi_averaged.normalized()),
        "tv_exact_analytic_exact_empty": total_variation(exact.averaged.normalized(),
                                                         with_exact_q.aoi_averaged.normalized()),
        "tv_exact_collision": total_variation(exact.collision.normalized(),
                                              with_exact_q.collision_duration.normalized()),
    }
    if spec.oracle_simulate:
        traces = run_simulation(system)
        sim = empirical_aoi_pmf(traces, pool=spec.pool).averaged
        columns["pmf_sim"] = sim
        info["tv_exact_sim"] = total_variation(exact.averaged.normalized(), sim.normalized())
        info["censored_fraction"] = 1.0 - sim.mass
    cut = {k: cut_tail(v) for k, v in columns.items()}
    hi = max(p.last for p in cut.values())
    bundle.columns("exact_aoi.csv", ("delta", *cut), [list(range(hi + 1))] +
                   [p.padded(0, hi) for p in cut.values()])
    bundle.columns("empty_slots.csv", ("n", "pmf"), (q_exact.support.tolist(), q_exact.weights))
    bundle.json("metrics.json", info)
    bundle.manifest(spec.effective())
    return info
