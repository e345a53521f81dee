"""Instruction indexing, target resolution, and hook planning.

The index pass numbers every instruction 1..N in textual order; those indices
name trace records and injection targets for the rest of the pipeline. Target
resolution maps a (function, variable, occurrence) description from the YAML
config onto the load instructions that read the variable, chasing pointer
chains through getelementptr, bitcast, and loads of pointer slots.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field

import yaml

from .ir.nodes import BasicBlock, Instruction, IrFunction, IrModule
from .ir.printer import print_module
from .faults import FaultSpec, parse_fault_type


class InstrumentError(Exception):
    pass


class FunctionNotFound(InstrumentError):
    pass


class VariableNotFound(InstrumentError):
    pass


class MainFunctionRejected(InstrumentError):
    pass


class NonNumericTarget(InstrumentError):
    pass


class TargetConfigError(InstrumentError):
    pass


def assign_indices(module: IrModule) -> IrModule:
    """Return a copy with instructions numbered 1..N in textual order."""
    out = copy.deepcopy(module)
    idx = 0
    for fn in out.functions:
        for block in fn.blocks:
            for ins in block.instructions:
                idx += 1
                ins.index = idx
    return out


def check_indexed(module: IrModule) -> None:
    expect = 1
    for _fn, _block, ins in module.all_instructions():
        if ins.index != expect:
            raise InstrumentError(
                f"instruction indices not contiguous from 1 (saw {ins.index}, wanted {expect})")
        expect += 1


@dataclass(frozen=True)
class TargetSpec:
    """One `option` entry from the YAML config."""

    function_name: str
    variable_name: str
    variable_location: int = 1
    in_arr: bool = False
    in_loop: bool = False
    variable_init: bool = False  # accepted for config compatibility; no effect


@dataclass(frozen=True)
class OccurrenceScope:
    """Which dynamic occurrences of the target get perturbed.

    mode "nth_execution": the k-th executions of the target instruction.
    mode "loop_iteration": executions during the k-th trips of the target's
        innermost loop within each activation of the frame.
    mode "invocation": every target execution during the k-th calls of the
        enclosing function.
    """

    mode: str
    k: tuple[int, ...]

    def __post_init__(self):
        if self.mode not in ("nth_execution", "loop_iteration", "invocation"):
            raise TargetConfigError(f"unknown scope mode {self.mode!r}")
        if not self.k or any(int(x) < 1 for x in self.k):
            raise TargetConfigError("scope ordinals must be positive integers")


@dataclass
class InputConfig:
    """Parsed injection config (the instrument-time YAML file)."""

    fi_type: str
    options: list[TargetSpec]
    loop_num: tuple[int, ...] = (1,)
    loop_mode: str = "invocation"
    seed: int = 0
    seed_salt: int = 0
    truncate: bool = True
    warnings: list[str] = field(default_factory=list)

    def fault_spec(self, base_dir: str = ".") -> FaultSpec:
        return parse_fault_type(self.fi_type, base_dir=base_dir,
                                seed_salt=self.seed_salt, truncate=self.truncate)


_KNOWN_TOP = {"fi_type", "variable_num", "loop_num", "loop_mode", "seed",
              "seed_salt", "truncate", "option"}
_KNOWN_OPT = {"function_name", "variable_name", "variable_location",
              "in_arr", "in_loop", "variable_init"}


def _as_bool(v, key: str) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false"):
        return v.lower() == "true"
    raise TargetConfigError(f"{key} must be a boolean, got {v!r}")


def _as_pos_int(v, key: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise TargetConfigError(f"{key} must be a positive integer, got {v!r}")
    return v


def load_input_config(path: str) -> InputConfig:
    """Load and validate the injection YAML. Unknown keys warn, they never fail."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise TargetConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise TargetConfigError(f"{path}: {e}") from e
    return parse_input_config(data, source=path)


def parse_input_config(data, source: str = "<config>") -> InputConfig:
    if not isinstance(data, dict):
        raise TargetConfigError(f"{source}: top level must be a mapping")
    warnings = [f"unknown key {k!r} ignored" for k in data if k not in _KNOWN_TOP]

    if "fi_type" not in data:
        raise TargetConfigError(f"{source}: fi_type is required")
    fi_type = data["fi_type"]
    if not isinstance(fi_type, str):
        raise TargetConfigError(f"{source}: fi_type must be a string")

    raw_opts = data.get("option")
    if not isinstance(raw_opts, list) or not raw_opts:
        raise TargetConfigError(f"{source}: option must be a non-empty list")
    options = []
    for i, opt in enumerate(raw_opts):
        if not isinstance(opt, dict):
            raise TargetConfigError(f"{source}: option[{i}] must be a mapping")
        warnings += [f"unknown option key {k!r} ignored" for k in opt if k not in _KNOWN_OPT]
        if "function_name" not in opt or "variable_name" not in opt:
            raise TargetConfigError(
                f"{source}: option[{i}] needs function_name and variable_name")
        options.append(TargetSpec(
            function_name=str(opt["function_name"]),
            variable_name=str(opt["variable_name"]).lstrip("%"),
            variable_location=_as_pos_int(opt.get("variable_location", 1),
                                          "variable_location"),
            in_arr=_as_bool(opt.get("in_arr", False), "in_arr"),
            in_loop=_as_bool(opt.get("in_loop", False), "in_loop"),
            variable_init=_as_bool(opt.get("variable_init", False), "variable_init"),
        ))

    if "variable_num" in data:
        n = _as_pos_int(data["variable_num"], "variable_num")
        if n != len(options):
            raise TargetConfigError(
                f"{source}: variable_num is {n} but option lists {len(options)} entries")

    loop_raw = data.get("loop_num", 1)
    if isinstance(loop_raw, list):
        loop_num = tuple(sorted({_as_pos_int(x, "loop_num") for x in loop_raw}))
        if not loop_num:
            raise TargetConfigError(f"{source}: loop_num list is empty")
    else:
        loop_num = (_as_pos_int(loop_raw, "loop_num"),)

    loop_mode = data.get("loop_mode", "invocation")
    if loop_mode not in ("nth_execution", "loop_iteration", "invocation"):
        raise TargetConfigError(f"{source}: unknown loop_mode {loop_mode!r}")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise TargetConfigError(f"{source}: seed must be an integer")
    seed_salt = data.get("seed_salt", 0)
    if isinstance(seed_salt, bool) or not isinstance(seed_salt, int):
        raise TargetConfigError(f"{source}: seed_salt must be an integer")

    return InputConfig(fi_type=fi_type, options=options, loop_num=loop_num,
                       loop_mode=loop_mode, seed=seed, seed_salt=seed_salt,
                       truncate=_as_bool(data.get("truncate", True), "truncate"),
                       warnings=warnings)


def _pointer_homes(fn: IrFunction, variable_name: str) -> set[str]:
    """Registers that root the variable's storage: a matching alloca, the
    alloca its parameter value is spilled into, or the parameter itself."""
    homes: set[str] = set()
    param_names = {name for name, _ in fn.params}
    if variable_name in param_names:
        homes.add(variable_name)
    for ins in fn.instructions():
        if ins.opcode == "alloca" and ins.result == variable_name:
            homes.add(ins.result)
        elif (ins.opcode == "store"
              and ins.operands[0].kind == "reg"
              and ins.operands[0].name == variable_name
              and variable_name in param_names
              and ins.operands[1].kind == "reg"):
            homes.add(ins.operands[1].name)
    return homes


def _chase_to_home(reg: str, defs: dict[str, Instruction], homes: set[str]) -> bool:
    """Walk a pointer register back through gep/bitcast/pointer-load chains."""
    seen = set()
    while True:
        if reg in homes:
            return True
        if reg in seen:
            return False
        seen.add(reg)
        ins = defs.get(reg)
        if ins is None:
            return False
        if ins.opcode in ("getelementptr", "bitcast"):
            src = ins.operands[0]
        elif ins.opcode == "load" and ins.result_type.is_pointer():
            src = ins.operands[0]
        else:
            return False
        if src.kind == "gep":
            src = src.base
        if src.kind != "reg":
            return False
        reg = src.name


def resolve_targets(module: IrModule, spec: TargetSpec) -> list[Instruction]:
    """Find the load instructions selected by one option entry.

    Loads whose pointer chains reach the variable's storage are counted in
    index order; variable_location picks the 1-based ordinal. With in_arr the
    pick extends to every numeric load from that ordinal on.
    """
    if spec.function_name == "main":
        raise MainFunctionRejected("main is the measurement harness, not a target")
    fn = module.function(spec.function_name)
    if fn is None:
        raise FunctionNotFound(spec.function_name)
    homes = _pointer_homes(fn, spec.variable_name)
    if not homes:
        raise VariableNotFound(f"{spec.function_name}: no variable %{spec.variable_name}")

    defs = {ins.result: ins for ins in fn.instructions() if ins.has_result()}
    accesses = []
    for ins in fn.instructions():
        if ins.opcode != "load":
            continue
        ptr = ins.operands[0]
        base = ptr.base if ptr.kind == "gep" else ptr
        if base.kind == "reg" and _chase_to_home(base.name, defs, homes):
            accesses.append(ins)

    if not accesses:
        raise VariableNotFound(
            f"{spec.function_name}: %{spec.variable_name} is never loaded")
    if spec.variable_location > len(accesses):
        raise VariableNotFound(
            f"{spec.function_name}: %{spec.variable_name} has {len(accesses)} "
            f"accesses, location {spec.variable_location} does not exist")

    if spec.in_arr:
        picked = [ins for ins in accesses[spec.variable_location - 1:]
                  if ins.result_type.is_numeric()]
        if not picked:
            raise NonNumericTarget(
                f"{spec.function_name}: no numeric loads of %{spec.variable_name} "
                f"from access {spec.variable_location} on")
        return picked
    ins = accesses[spec.variable_location - 1]
    if not ins.result_type.is_numeric():
        raise NonNumericTarget(
            f"{spec.function_name}: access {spec.variable_location} of "
            f"%{spec.variable_name} loads a {ins.result_type.render()}, not a number")
    return [ins]


def derive_scope(config: InputConfig, spec: TargetSpec) -> OccurrenceScope:
    if not spec.in_loop:
        return OccurrenceScope("nth_execution", (1,))
    return OccurrenceScope(config.loop_mode, config.loop_num)


def _value_kind(ins: Instruction) -> str:
    t = ins.result_type
    if t.kind in ("i32", "i64", "f32", "f64"):
        return t.kind
    raise NonNumericTarget(f"unsupported injection type {t.render()}")


@dataclass(frozen=True)
class PlanTarget:
    index: int
    function: str
    value_kind: str  # "i32" | "i64" | "f32" | "f64"


@dataclass(frozen=True)
class InjectionPlan:
    """Static description of where and when to inject for one run."""

    targets: tuple[PlanTarget, ...]
    scope: OccurrenceScope

    def target_indices(self) -> frozenset[int]:
        return frozenset(t.index for t in self.targets)


def build_plan(module: IrModule, config: InputConfig) -> InjectionPlan:
    """Resolve every option entry against an indexed module."""
    check_indexed(module)
    scope = None
    targets: dict[int, PlanTarget] = {}
    for spec in config.options:
        s = derive_scope(config, spec)
        if scope is None:
            scope = s
        elif scope != s:
            raise TargetConfigError(
                "option entries disagree on occurrence scope; split them into "
                "separate configs")
        for ins in resolve_targets(module, spec):
            targets[ins.index] = PlanTarget(ins.index, spec.function_name,
                                            _value_kind(ins))
    assert scope is not None
    ordered = tuple(targets[i] for i in sorted(targets))
    return InjectionPlan(targets=ordered, scope=scope)


@dataclass
class InstrumentedModule:
    """An indexed module plus the hook configuration the runtime honors.

    mode "profiling": trace every value-producing instruction and store.
    mode "injection": same tracing, plus fault hooks at the plan's targets.
    """

    module: IrModule
    mode: str  # "profiling" | "injection"
    plan: InjectionPlan | None = None

    def __post_init__(self):
        if self.mode not in ("profiling", "injection"):
            raise InstrumentError(f"unknown instrumentation mode {self.mode!r}")
        if self.mode == "injection":
            if self.plan is None:
                raise InstrumentError("injection mode needs an InjectionPlan")
            have = {ins.index for _f, _b, ins in self.module.all_instructions()}
            missing = self.plan.target_indices() - have
            if missing:
                raise InstrumentError(f"plan targets {sorted(missing)} not in module")


def insert_hooks(module: IrModule, mode: str,
                 plan: InjectionPlan | None = None) -> InstrumentedModule:
    check_indexed(module)
    return InstrumentedModule(module=module, mode=mode, plan=plan)


def loop_blocks_for(fn: IrFunction, label: str):
    """Innermost loop containing a block, found by back-edge heuristic.

    A back edge is a branch to a block at the same or earlier textual
    position; its loop body is the natural loop of that edge, walking
    predecessors back from the latch until the header. Returns
    (header_label, frozenset_of_labels) or None when the block sits in
    no loop.
    """
    pos = {b.label: i for i, b in enumerate(fn.blocks)}
    succ: dict[str, list[str]] = {b.label: [] for b in fn.blocks}
    for b in fn.blocks:
        term = b.terminator()
        if term is not None and term.opcode == "br":
            succ[b.label] = [l for l in term.labels if l in pos]

    pred: dict[str, list[str]] = {b.label: [] for b in fn.blocks}
    for src, outs in succ.items():
        for dst in outs:
            pred[dst].append(src)

    best = None
    for src, outs in succ.items():
        for header in outs:
            if pos[header] > pos[src]:
                continue
            body = {header, src}
            work = [src] if src != header else []
            while work:
                for p in pred[work.pop()]:
                    if p not in body:
                        body.add(p)
                        work.append(p)
            if label in body and (best is None or len(body) < len(best[1])):
                best = (header, frozenset(body))
    return best


ARTIFACT_SUFFIXES = ("-lcfi_index.ll", "-lcfi_profiling.ll", "-lcfi_fi.ll")


def emit_artifacts(module: IrModule, source_path: str, out_dir: str = "",
                   plan: InjectionPlan | None = None,
                   config: InputConfig | None = None) -> list[str]:
    """Write the indexed, profiling, and injection-ready program files."""
    check_indexed(module)
    stem = os.path.splitext(os.path.basename(source_path))[0]
    out_dir = out_dir or os.path.dirname(os.path.abspath(source_path))
    os.makedirs(out_dir, exist_ok=True)
    body = print_module(module)

    paths = []

    def write(suffix: str, header_lines: list[str]):
        path = os.path.join(out_dir, stem + suffix)
        with open(path, "w", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"; {line}\n")
            fh.write(body)
        paths.append(path)

    write("-lcfi_index.ll", ["lcfi: instruction index annotations"])
    write("-lcfi_profiling.ll",
          ["lcfi: profiling build, trace hooks on every value-producing "
           "instruction and store"])
    fi_header = ["lcfi: fault-injection build"]
    if plan is not None:
        idxs = ", ".join(str(t.index) for t in plan.targets)
        fi_header.append(f"lcfi: targets [{idxs}] scope {plan.scope.mode} "
                         f"k={list(plan.scope.k)}")
    if config is not None:
        fi_header.append(f"lcfi: fi_type {config.fi_type}")
    write("-lcfi_fi.ll", fi_header)
    return paths
