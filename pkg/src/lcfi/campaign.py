"""Campaign driver: one golden run, N seeded injection runs, a report.

The golden run executes the profiling build (tracing on, no faults) and its
stdout plus trace become the baseline artifacts. Every injection run gets an
independent sampler seeded from (campaign seed, run index, salt), so a rerun
of the same config reproduces every artifact byte for byte, with or without
worker processes.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import yaml

from .ir.parser import parse_module, ParseError
from .ir.validate import validate
from .instrument import (InputConfig, InjectionPlan, assign_indices, build_plan,
                         emit_artifacts, load_input_config, InstrumentError)
from .faults import FaultSpec, make_sampler, FaultError, mix64
from .vm.machine import IoConfig, Machine, RunOutcome
from .traces import write_trace

OUTCOMES = ("crash", "hang", "sdc", "benign_masked", "benign_not_activated")


class ConfigError(Exception):
    pass


class GoldenRunFailed(Exception):
    def __init__(self, outcome: RunOutcome):
        self.outcome = outcome
        detail = outcome.trap.kind if outcome.trap else outcome.status
        super().__init__(f"golden run did not complete: {detail}")


class NonPositiveForLog(Exception):
    pass


@dataclass
class MetricSpec:
    name: str
    pattern: re.Pattern
    source: str = "stdout"       # "stdout" (each faulty run) | "golden"
    transform: str = "identity"  # "identity" | "neg_log10"


@dataclass
class CompareSpec:
    mode: str = "exact"  # "exact" | "numeric" | "none"
    rel_tol: float = 1e-9
    abs_tol: float = 0.0


@dataclass
class CampaignConfig:
    program: str
    input: str
    runs: int = 10
    seed: int | None = None
    budget: int = 10 ** 8
    jobs: int = 1
    output_dir: str = "lcfi-out"
    report_formats: tuple[str, ...] = ("txt", "json", "csv")
    stdin_text: str = ""
    files: dict[str, str] = field(default_factory=dict)
    workdir: str = ""
    compare: CompareSpec = field(default_factory=CompareSpec)
    metrics: list[MetricSpec] = field(default_factory=list)

    def io_config(self) -> IoConfig:
        workdir = self.workdir or os.path.dirname(os.path.abspath(self.program))
        return IoConfig(stdin_text=self.stdin_text, files=dict(self.files),
                        workdir=workdir)


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def parse_campaign_config(data, base_dir: str = ".",
                          source: str = "<config>") -> CampaignConfig:
    _require(isinstance(data, dict), f"{source}: top level must be a mapping")
    _require("program" in data, f"{source}: program is required")
    _require("input" in data, f"{source}: input is required")

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    cfg = CampaignConfig(program=resolve(str(data["program"])),
                         input=resolve(str(data["input"])))

    if "runs" in data:
        _require(isinstance(data["runs"], int) and not isinstance(data["runs"], bool)
                 and data["runs"] >= 1, f"{source}: runs must be a positive integer")
        cfg.runs = data["runs"]
    if "seed" in data:
        _require(isinstance(data["seed"], int) and not isinstance(data["seed"], bool),
                 f"{source}: seed must be an integer")
        cfg.seed = data["seed"]
    if "budget" in data:
        _require(isinstance(data["budget"], int) and data["budget"] >= 1,
                 f"{source}: budget must be a positive integer")
        cfg.budget = data["budget"]
    if "jobs" in data:
        _require(isinstance(data["jobs"], int) and data["jobs"] >= 1,
                 f"{source}: jobs must be a positive integer")
        cfg.jobs = data["jobs"]
    if "output_dir" in data:
        cfg.output_dir = resolve(str(data["output_dir"]))
    if "report_formats" in data:
        fmts = data["report_formats"]
        _require(isinstance(fmts, list) and fmts, f"{source}: report_formats must be a list")
        for f in fmts:
            _require(f in ("txt", "json", "csv"),
                     f"{source}: unknown report format {f!r}")
        cfg.report_formats = tuple(fmts)

    io_block = data.get("io", {})
    _require(isinstance(io_block, dict), f"{source}: io must be a mapping")
    if "stdin" in io_block:
        cfg.stdin_text = str(io_block["stdin"])
    if "workdir" in io_block:
        cfg.workdir = resolve(str(io_block["workdir"]))
    files = io_block.get("files", {})
    _require(isinstance(files, dict), f"{source}: io.files must be a mapping")
    for name, val in files.items():
        if isinstance(val, dict):
            _require("from" in val, f"{source}: io.files[{name!r}] needs a 'from' path")
            try:
                with open(resolve(str(val["from"])), encoding="utf-8") as fh:
                    cfg.files[str(name)] = fh.read()
            except OSError as e:
                raise ConfigError(f"{source}: io.files[{name!r}]: {e}") from e
        else:
            cfg.files[str(name)] = str(val)

    cmp_block = data.get("compare", {})
    _require(isinstance(cmp_block, dict), f"{source}: compare must be a mapping")
    mode = cmp_block.get("mode", "exact")
    _require(mode in ("exact", "numeric", "none"),
             f"{source}: compare.mode must be exact, numeric, or none")
    cfg.compare = CompareSpec(mode=mode,
                              rel_tol=float(cmp_block.get("rel_tol", 1e-9)),
                              abs_tol=float(cmp_block.get("abs_tol", 0.0)))

    for i, m in enumerate(data.get("metrics", []) or []):
        _require(isinstance(m, dict), f"{source}: metrics[{i}] must be a mapping")
        _require("name" in m and "pattern" in m,
                 f"{source}: metrics[{i}] needs name and pattern")
        try:
            pat = re.compile(m["pattern"])
        except re.error as e:
            raise ConfigError(f"{source}: metrics[{i}].pattern: {e}") from e
        _require(pat.groups == 1,
                 f"{source}: metrics[{i}].pattern must have exactly one capture group")
        transform = m.get("transform", "identity")
        _require(transform in ("identity", "neg_log10"),
                 f"{source}: metrics[{i}].transform must be identity or neg_log10")
        metric_source = m.get("source", "stdout")
        _require(metric_source in ("stdout", "golden"),
                 f"{source}: metrics[{i}].source must be stdout or golden")
        cfg.metrics.append(MetricSpec(str(m["name"]), pat, metric_source, transform))

    return cfg


def load_campaign_config(path: str) -> CampaignConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_campaign_config(data, base_dir=os.path.dirname(os.path.abspath(path)),
                                 source=path)


# -- outcome classification ---------------------------------------------------

_NUM_TOKEN = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def outputs_match(golden: str, faulty: str, compare: CompareSpec) -> bool:
    if compare.mode == "none":
        return True
    if compare.mode == "exact":
        return golden == faulty
    g_nums = _NUM_TOKEN.findall(golden)
    f_nums = _NUM_TOKEN.findall(faulty)
    if len(g_nums) != len(f_nums):
        return False
    if _NUM_TOKEN.sub("#", golden) != _NUM_TOKEN.sub("#", faulty):
        return False
    for gs, fs in zip(g_nums, f_nums):
        if not math.isclose(float(gs), float(fs),
                            rel_tol=compare.rel_tol, abs_tol=compare.abs_tol):
            return False
    return True


def classify_outcome(golden: RunOutcome, run: RunOutcome,
                     compare: CompareSpec) -> str:
    if run.status == "trapped":
        return "crash"
    if run.status == "budget_exhausted":
        return "hang"
    if not outputs_match(golden.stdout, run.stdout, compare):
        return "sdc"
    if run.activation_count > 0:
        return "benign_masked"
    return "benign_not_activated"


def extract_metric(text: str, spec: MetricSpec) -> float | None:
    """Pull one number out of program output; None when the pattern misses."""
    m = spec.pattern.search(text)
    if m is None:
        return None
    try:
        v = float(m.group(1))
    except ValueError:
        return None
    if spec.transform == "neg_log10":
        if v <= 0:
            raise NonPositiveForLog(
                f"metric {spec.name}: neg_log10 of non-positive value {v!r}")
        return -math.log10(v)
    return v


# -- running -------------------------------------------------------------------

@dataclass
class RunResult:
    run_index: int
    seed: int
    outcome: str
    activation_count: int
    skipped_nonfinite: int
    steps: int
    stdout: str
    trap_kind: str = ""
    metrics: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    trace_lines: list[str] = field(default_factory=list)
    injection_lines: list[str] = field(default_factory=list)


@dataclass
class CampaignResult:
    config: CampaignConfig
    plan: InjectionPlan
    golden: RunOutcome
    runs: list[RunResult]
    counts: dict[str, int]
    report_paths: list[str]

    def percentage(self, outcome: str) -> float:
        return 100.0 * self.counts.get(outcome, 0) / max(1, len(self.runs))


def _worker_run(module, plan, fault_spec: FaultSpec, io_cfg: IoConfig,
                budget: int, run_index: int, run_seed: int) -> tuple:
    sampler = make_sampler(fault_spec, run_seed)
    machine = Machine(module, io=io_cfg, budget=budget, trace=True,
                      plan=plan, sampler=sampler)
    return run_index, machine.run()


def _injection_log_lines(outcome: RunOutcome, run_index: int, seed: int) -> list[str]:
    lines = [f"run={run_index} seed={seed} activations={outcome.activation_count} "
             f"skipped_nonfinite={outcome.skipped_nonfinite}"]
    for a in outcome.activations:
        lines.append(f"fi_index={a.index} opcode={a.opcode} step={a.step} "
                     f"original={a.original_hex} faulted={a.faulted_hex} "
                     f"error={a.error!r}")
    return lines


def run_campaign(cfg: CampaignConfig, emit_programs: bool = True) -> CampaignResult:
    """Execute a full campaign and write the artifact tree."""
    try:
        with open(cfg.program, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read program: {e}") from e
    try:
        module = parse_module(text, source_name=os.path.basename(cfg.program))
    except ParseError as e:
        raise ConfigError(f"{cfg.program}: {e}") from e
    problems = validate(module)
    if problems:
        raise ConfigError(f"{cfg.program}: " + "; ".join(str(p) for p in problems))

    indexed = assign_indices(module)
    try:
        input_cfg = load_input_config(cfg.input)
        plan = build_plan(indexed, input_cfg)
        fault_spec = input_cfg.fault_spec(base_dir=os.path.dirname(
            os.path.abspath(cfg.input)))
    except (InstrumentError, FaultError) as e:
        raise ConfigError(str(e)) from e

    campaign_seed = cfg.seed if cfg.seed is not None else input_cfg.seed
    io_cfg = cfg.io_config()

    out = cfg.output_dir
    baseline_dir = os.path.join(out, "llfi", "baseline")
    std_dir = os.path.join(out, "llfi", "std_output")
    err_dir = os.path.join(out, "llfi", "error_output")
    prog_dir = os.path.join(out, "llfi", "prog_output")
    stat_dir = os.path.join(out, "llfi", "llfi_stat_output")
    for d in (baseline_dir, std_dir, err_dir, prog_dir, stat_dir):
        os.makedirs(d, exist_ok=True)

    if emit_programs:
        emit_artifacts(indexed, cfg.program, out_dir=out, plan=plan,
                       config=input_cfg)

    golden_machine = Machine(indexed, io=io_cfg, budget=cfg.budget, trace=True)
    golden = golden_machine.run()
    if golden.status != "ok":
        raise GoldenRunFailed(golden)

    with open(os.path.join(baseline_dir, "golden_std_output"), "w",
              encoding="utf-8") as fh:
        fh.write(golden.stdout)
    write_trace(golden.trace, os.path.join(baseline_dir, "llfi.stat.trace.prof.txt"))

    golden_metrics: dict[str, float] = {}
    golden_notes: list[str] = []
    for spec in cfg.metrics:
        if spec.source != "golden":
            continue
        try:
            v = extract_metric(golden.stdout, spec)
        except NonPositiveForLog as e:
            golden_notes.append(str(e))
            v = None
        if v is not None:
            golden_metrics[spec.name] = v

    seeds = [mix64(campaign_seed, i, fault_spec.seed_salt) for i in range(cfg.runs)]
    outcomes: list[RunOutcome] = [None] * cfg.runs
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_worker_run, indexed, plan, fault_spec,
                                   io_cfg, cfg.budget, i, seeds[i])
                       for i in range(cfg.runs)]
            for fut in futures:
                idx, oc = fut.result()
                outcomes[idx] = oc
    else:
        for i in range(cfg.runs):
            outcomes[i] = _worker_run(indexed, plan, fault_spec, io_cfg,
                                      cfg.budget, i, seeds[i])[1]

    results: list[RunResult] = []
    counts = {k: 0 for k in OUTCOMES}
    for i, oc in enumerate(outcomes):
        outcome = classify_outcome(golden, oc, cfg.compare)
        counts[outcome] += 1
        rr = RunResult(
            run_index=i, seed=seeds[i], outcome=outcome,
            activation_count=oc.activation_count,
            skipped_nonfinite=oc.skipped_nonfinite, steps=oc.steps,
            stdout=oc.stdout, trap_kind=oc.trap.kind if oc.trap else "")
        rr.metrics.update(golden_metrics)
        for spec in cfg.metrics:
            if spec.source != "stdout":
                continue
            try:
                v = extract_metric(oc.stdout, spec)
            except NonPositiveForLog as e:
                rr.notes.append(str(e))
                v = None
            if v is not None:
                rr.metrics[spec.name] = v
        if oc.skipped_nonfinite:
            rr.notes.append(f"{oc.skipped_nonfinite} fault(s) skipped on "
                            "non-finite target values")
        rr.trace_lines = [r.render() for r in oc.trace]
        rr.injection_lines = _injection_log_lines(oc, i, seeds[i])
        results.append(rr)

        with open(os.path.join(std_dir, f"std_outputfile-run-{i}-0"), "w",
                  encoding="utf-8") as fh:
            fh.write(oc.stdout)
        if outcome in ("crash", "hang"):
            with open(os.path.join(err_dir, f"errorfile-run-{i}-0"), "w",
                      encoding="utf-8") as fh:
                if oc.trap is not None:
                    fh.write(f"{oc.trap.kind}: {oc.trap.message}\n"
                             f"function: @{oc.trap.function} "
                             f"index: {oc.trap.index}\n")
                else:
                    fh.write(f"budget exhausted after {oc.steps} steps\n")
        with open(os.path.join(stat_dir, f"llfi.stat.trace.{i}-0.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(rr.trace_lines) + ("\n" if rr.trace_lines else ""))
        with open(os.path.join(stat_dir, f"llfi.stat.fi.injectedfaults.{i}-0.txt"),
                  "w", encoding="utf-8") as fh:
            fh.write("\n".join(rr.injection_lines) + "\n")

    result = CampaignResult(config=cfg, plan=plan, golden=golden, runs=results,
                            counts=counts, report_paths=[])
    result.report_paths = write_reports(result, golden_notes)
    return result


# -- reports --------------------------------------------------------------------

def _metric_summary(runs: list[RunResult]) -> dict[str, dict[str, float]]:
    by_name: dict[str, list[float]] = {}
    for r in runs:
        for name, v in r.metrics.items():
            by_name.setdefault(name, []).append(v)
    out = {}
    for name in sorted(by_name):
        vs = by_name[name]
        out[name] = {"count": len(vs), "mean": sum(vs) / len(vs),
                     "min": min(vs), "max": max(vs)}
    return out


def render_text_report(result: CampaignResult, golden_notes: list[str]) -> str:
    cfg = result.config
    n = len(result.runs)
    lines = [
        f"fault injection campaign: {os.path.basename(cfg.program)}",
        f"runs: {n}   targets: {sorted(result.plan.target_indices())}   "
        f"scope: {result.plan.scope.mode} k={list(result.plan.scope.k)}",
        "",
        f"{'outcome':<22}{'runs':>6}{'pct':>8}",
    ]
    for name in OUTCOMES:
        c = result.counts.get(name, 0)
        pct = 100.0 * c / max(1, n)
        bar = "#" * round(pct * 0.4)
        lines.append(f"{name:<22}{c:>6}{pct:>7.1f}% {bar}")
    summary = _metric_summary(result.runs)
    if summary:
        lines.append("")
        lines.append("metrics:")
        for name, s in summary.items():
            lines.append(f"  {name}: n={s['count']} mean={s['mean']:.6g} "
                         f"min={s['min']:.6g} max={s['max']:.6g}")
    notes = list(golden_notes)
    for r in result.runs:
        notes.extend(f"run {r.run_index}: {note}" for note in r.notes)
    if notes:
        lines.append("")
        lines.append("notes:")
        lines.extend(f"  {note}" for note in notes)
    return "\n".join(lines) + "\n"


def render_json_report(result: CampaignResult, golden_notes: list[str]) -> str:
    n = len(result.runs)
    doc = {
        "program": os.path.basename(result.config.program),
        "runs": n,
        "targets": sorted(result.plan.target_indices()),
        "scope": {"mode": result.plan.scope.mode, "k": list(result.plan.scope.k)},
        "outcomes": {k: result.counts.get(k, 0) for k in OUTCOMES},
        "percentages": {k: round(100.0 * result.counts.get(k, 0) / max(1, n), 4)
                        for k in OUTCOMES},
        "metrics_summary": _metric_summary(result.runs),
        "golden_notes": golden_notes,
        "run_details": [{
            "run": r.run_index,
            "seed": r.seed,
            "outcome": r.outcome,
            "trap": r.trap_kind,
            "activations": r.activation_count,
            "skipped_nonfinite": r.skipped_nonfinite,
            "steps": r.steps,
            "metrics": dict(sorted(r.metrics.items())),
            "notes": r.notes,
        } for r in result.runs],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def render_csv_report(result: CampaignResult) -> str:
    metric_names = sorted({name for r in result.runs for name in r.metrics})
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "seed", "outcome", "trap", "activations",
                "skipped_nonfinite", "steps"] + metric_names)
    for r in result.runs:
        row = [r.run_index, r.seed, r.outcome, r.trap_kind, r.activation_count,
               r.skipped_nonfinite, r.steps]
        row += [r.metrics.get(name, "") for name in metric_names]
        w.writerow(row)
    return buf.getvalue()


def write_reports(result: CampaignResult, golden_notes: list[str]) -> list[str]:
    paths = []
    out = result.config.output_dir
    for fmt in result.config.report_formats:
        path = os.path.join(out, f"report.{fmt}")
        if fmt == "txt":
            content = render_text_report(result, golden_notes)
        elif fmt == "json":
            content = render_json_report(result, golden_notes)
        else:
            content = render_csv_report(result)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        paths.append(path)
    return paths
