"""Direct interpreter for the IR subset with trace and fault hooks.

Values are host-native: integers stay canonically signed and wrap at their
type width, floats are IEEE doubles (f32 results re-rounded through 32 bits),
pointers are arena addresses. The call stack is explicit, so recursion depth
is bounded by the configured frame limit rather than the host stack.

Hook order at a target instruction: the result is computed, the occurrence
scope is consulted, a sampled error is applied, and only then does the trace
record the (possibly faulted) value. A fault on a non-finite value is skipped
and counted separately; it is not an activation.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

from ..ir.nodes import IrModule, IrFunction, Instruction, IrType, ValueRef
from ..faults import Sampler, sample_error, apply_fault
from ..instrument import InjectionPlan, loop_blocks_for
from ..traces import TraceRecord
from .arena import MemoryArena, OutOfBounds
from .intrinsics import (INTRINSICS, InStream, STDIN_HANDLE, STDOUT_HANDLE,
                         STDERR_HANDLE)

TRAP_KINDS = frozenset({
    "out_of_bounds", "division_by_zero", "invalid_branch", "stack_overflow",
    "bad_intrinsic_arg", "non_finite_fault_target",
})

DEFAULT_BUDGET = 10 ** 8
DEFAULT_MAX_DEPTH = 10 ** 4

_HEAP_BASE = 1 << 32


class VmError(Exception):
    """Malformed program state the validator should have rejected."""


@dataclass(frozen=True)
class TrapInfo:
    kind: str
    message: str
    function: str = ""
    index: int | None = None


class _TrapSignal(Exception):
    def __init__(self, info: TrapInfo):
        self.info = info
        super().__init__(f"{info.kind}: {info.message}")


class _BudgetExhausted(Exception):
    pass


@dataclass
class Activation:
    index: int
    opcode: str
    step: int
    original_hex: str
    faulted_hex: str
    error: float


@dataclass
class RunOutcome:
    status: str  # "ok" | "trapped" | "budget_exhausted"
    return_value: object = None
    stdout: str = ""
    trap: TrapInfo | None = None
    steps: int = 0
    activation_count: int = 0
    activations: list[Activation] = field(default_factory=list)
    skipped_nonfinite: int = 0
    trace: list[TraceRecord] | None = None

    @property
    def trapped(self) -> bool:
        return self.status == "trapped"


@dataclass
class IoConfig:
    stdin_text: str = ""
    files: dict[str, str] = field(default_factory=dict)
    workdir: str = ""


class Frame:
    __slots__ = ("fn", "label", "prev_label", "pc", "regs", "mark",
                 "inv_ordinal", "loop_trips")

    def __init__(self, fn: IrFunction, mark: int, inv_ordinal: int):
        self.fn = fn
        self.label = fn.blocks[0].label
        self.prev_label: str | None = None
        self.pc = 0
        self.regs: dict[str, object] = {}
        self.mark = mark
        self.inv_ordinal = inv_ordinal
        self.loop_trips: dict[str, int] = {}


def value_bits(value, vtype: IrType) -> str:
    """Render a runtime value as the trace's fixed-width hex field."""
    k = vtype.kind
    if k == "f64":
        return "%016x" % struct.unpack("<Q", struct.pack("<d", float(value)))[0]
    if k == "f32":
        return "%08x" % struct.unpack("<I", struct.pack("<f", float(value)))[0]
    if k in ("ptr", "i64"):
        return "%016x" % (int(value) & 0xFFFFFFFFFFFFFFFF)
    if k in ("i1", "i8", "i32"):
        return "%08x" % (int(value) & 0xFFFFFFFF)
    return "00000000"


def _wrap(v: int, bits: int) -> int:
    half = 1 << (bits - 1)
    return ((v + half) & ((1 << bits) - 1)) - half


def _to_f32(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


class Machine:
    """One execution of one module. Machines are single-use."""

    def __init__(self, module: IrModule, io: IoConfig | None = None,
                 budget: int = DEFAULT_BUDGET, max_depth: int = DEFAULT_MAX_DEPTH,
                 trace: bool = False, plan: InjectionPlan | None = None,
                 sampler: Sampler | None = None, strict_nonfinite: bool = False):
        self.module = module
        self.io = io or IoConfig()
        self.budget = budget
        self.max_depth = max_depth
        self.tracing = trace
        self.plan = plan
        self.sampler = sampler
        self.strict_nonfinite = strict_nonfinite
        if plan is not None and sampler is None:
            raise ValueError("an injection plan needs a sampler")

        self.arena = MemoryArena()
        self.heap = MemoryArena(base=_HEAP_BASE)
        self.stdin = InStream(self.io.stdin_text)
        self.open_streams: dict[int, InStream] = {}
        self._stdout_parts: list[str] = []
        self.trace_records: list[TraceRecord] = []
        self.activations: list[Activation] = []
        self.skipped_nonfinite = 0
        self.steps = 0

        self._fns = {f.name: f for f in module.functions}
        self._blocks = {f.name: {b.label: b for b in f.blocks}
                        for f in module.functions}
        self._globals: dict[str, int] = {}
        self._call_counts: dict[str, int] = {}
        self._cur_fn = ""
        self._cur_index: int | None = None

        self._target_kinds: dict[int, str] = {}
        self._exec_counts: dict[int, int] = {}
        self._scope_k: frozenset[int] = frozenset()
        self._scope_mode = ""
        self._loop_info: dict[int, tuple[str, frozenset[str]] | None] = {}
        self._fn_loop_watch: dict[str, list[tuple[str, frozenset[str]]]] = {}
        if plan is not None:
            self._scope_mode = plan.scope.mode
            self._scope_k = frozenset(plan.scope.k)
            for t in plan.targets:
                self._target_kinds[t.index] = t.value_kind
                self._exec_counts[t.index] = 0
            if self._scope_mode == "loop_iteration":
                self._setup_loop_watch(plan)

        self._init_globals()

    # -- setup -------------------------------------------------------------

    def _setup_loop_watch(self, plan: InjectionPlan) -> None:
        locate = {}
        for fn in self.module.functions:
            for b in fn.blocks:
                for ins in b.instructions:
                    if ins.index in self._target_kinds:
                        locate[ins.index] = (fn, b.label)
        for t in plan.targets:
            fn, label = locate[t.index]
            found = loop_blocks_for(fn, label)
            self._loop_info[t.index] = found
            if found is not None:
                watch = self._fn_loop_watch.setdefault(fn.name, [])
                if found not in watch:
                    watch.append(found)

    def _init_globals(self) -> None:
        handles = {"stdin": STDIN_HANDLE, "stdout": STDOUT_HANDLE,
                   "stderr": STDERR_HANDLE}
        for g in self.module.globals:
            addr = self.arena.alloc(g.type.byte_width(),
                                    g.align or g.type.alignment())
            self._globals[g.name] = addr
            if g.external and g.name in handles:
                self.arena.store_int(addr, handles[g.name], 64)
                continue
            init = g.init
            if init is None or init.kind == "zero":
                continue
            if init.kind == "bytes":
                self.arena.store_bytes(addr, init.data)
            elif init.kind == "scalar":
                self._store_typed(addr, self._const_value(init.value), g.type)
            elif init.kind == "array":
                elem = g.type.elem
                step = elem.byte_width()
                for i, v in enumerate(init.values):
                    self._store_typed(addr + i * step, self._const_value(v), elem)

    def _const_value(self, v: ValueRef):
        if v.kind == "int":
            return v.ival
        if v.kind == "float":
            return v.fval
        if v.kind == "null":
            return 0
        if v.kind == "global":
            return self._globals[v.name]
        if v.kind == "gep":
            return self._gep_const_addr(v)
        raise VmError(f"unsupported constant initializer {v.render()}")

    def _gep_const_addr(self, v: ValueRef) -> int:
        base = self._const_value(v.base)
        idxs = [self._const_value(i) for i in v.indices]
        return self._gep_addr(v.gep_source, base, idxs)

    def _store_typed(self, addr: int, value, vtype: IrType) -> None:
        k = vtype.kind
        if k == "f64":
            self.arena.store_f64(addr, float(value))
        elif k == "f32":
            self.arena.store_f32(addr, float(value))
        elif k == "ptr":
            self.arena.store_int(addr, int(value), 64)
        elif k in ("i1", "i8", "i32", "i64"):
            self.arena.store_int(addr, int(value), vtype.int_bits())
        else:
            raise VmError(f"cannot store type {vtype.render()}")

    # -- services used by intrinsics ----------------------------------------

    def write_stdout(self, text: str) -> None:
        self._stdout_parts.append(text)

    def resolve_file(self, path: str) -> str | None:
        if path in self.io.files:
            return self.io.files[path]
        full = os.path.join(self.io.workdir, path) if self.io.workdir else path
        try:
            with open(full, encoding="utf-8") as fh:
                return fh.read()
        except OSError:
            return None

    def mem_for(self, addr: int) -> MemoryArena:
        return self.heap if addr >= _HEAP_BASE else self.arena

    def trap(self, kind: str, message: str):
        assert kind in TRAP_KINDS, kind
        raise _TrapSignal(TrapInfo(kind, message, self._cur_fn, self._cur_index))

    # -- running -------------------------------------------------------------

    def run(self, entry: str = "main", args: tuple = ()) -> RunOutcome:
        try:
            ret = self._exec(entry, args)
            status, trap, value = "ok", None, ret
        except _TrapSignal as t:
            status, trap, value = "trapped", t.info, None
        except OutOfBounds as e:
            info = TrapInfo("out_of_bounds", str(e), self._cur_fn, self._cur_index)
            status, trap, value = "trapped", info, None
        except _BudgetExhausted:
            status, trap, value = "budget_exhausted", None, None
        return RunOutcome(
            status=status, return_value=value, stdout="".join(self._stdout_parts),
            trap=trap, steps=self.steps, activation_count=len(self.activations),
            activations=self.activations, skipped_nonfinite=self.skipped_nonfinite,
            trace=self.trace_records if self.tracing else None)

    def _push_frame(self, fn: IrFunction, args: tuple, stack: list[Frame]) -> Frame:
        if len(stack) >= self.max_depth:
            self.trap("stack_overflow",
                      f"call depth exceeds {self.max_depth} frames")
        if not fn.blocks:
            raise VmError(f"@{fn.name} has no body")
        if len(args) != len(fn.params):
            raise VmError(f"@{fn.name} called with {len(args)} args, "
                          f"takes {len(fn.params)}")
        self._call_counts[fn.name] = self._call_counts.get(fn.name, 0) + 1
        frame = Frame(fn, self.arena.mark(), self._call_counts[fn.name])
        for (pname, _ptype), a in zip(fn.params, args):
            frame.regs[pname] = a
        stack.append(frame)
        return frame

    def _exec(self, entry: str, args: tuple):
        fn = self._fns.get(entry)
        if fn is None:
            raise VmError(f"no function @{entry}")
        stack: list[Frame] = []
        self._push_frame(fn, args, stack)

        while True:
            frame = stack[-1]
            self._cur_fn = frame.fn.name
            block = self._blocks[frame.fn.name].get(frame.label)
            if block is None:
                self.trap("invalid_branch", f"no block %{frame.label}")
            if frame.pc >= len(block.instructions):
                raise VmError(f"@{frame.fn.name} %{frame.label} has no terminator")
            ins = block.instructions[frame.pc]
            self._cur_index = ins.index
            self.steps += 1
            if self.steps > self.budget:
                raise _BudgetExhausted

            op = ins.opcode
            if op == "ret":
                value = self._value(frame, ins.operands[0]) if ins.operands else None
                self.arena.release(frame.mark)
                stack.pop()
                if not stack:
                    return value
                caller = stack[-1]
                call_ins = (self._blocks[caller.fn.name][caller.label]
                            .instructions[caller.pc])
                self._finish_call(caller, call_ins, value)
                continue

            if op == "br":
                self._do_branch(frame, ins)
                continue

            if op == "call":
                callee = ins.callee
                target = self._fns.get(callee)
                if target is not None:
                    call_args = tuple(self._value(frame, v) for v in ins.operands)
                    self._push_frame(target, call_args, stack)
                    continue
                impl = INTRINSICS.get(callee)
                if impl is None:
                    raise VmError(f"call to unknown function @{callee}")
                call_args = [self._value(frame, v) for v in ins.operands]
                result = impl(self, call_args)
                self._finish_call(frame, ins, result)
                continue

            if op == "store":
                value = self._value(frame, ins.operands[0])
                addr = int(self._value(frame, ins.operands[1]))
                self._store_typed_any(addr, value, ins.operands[0].type)
                self._trace(ins, None, None)
                frame.pc += 1
                continue

            value = self._compute(frame, ins)
            value = self._maybe_inject(frame, ins, value)
            if ins.result is not None:
                frame.regs[ins.result] = value
            self._trace(ins, value, ins.result_type)
            frame.pc += 1

    def _finish_call(self, frame: Frame, ins: Instruction, value) -> None:
        if ins.result is not None:
            if ins.result_type.is_void():
                raise VmError("void call binds a register")
            frame.regs[ins.result] = value
        if ins.result_type.is_void() or value is None:
            self._trace(ins, None, None)
        else:
            self._trace(ins, value, ins.result_type)
        frame.pc += 1

    def _do_branch(self, frame: Frame, ins: Instruction) -> None:
        if ins.operands:
            cond = int(self._value(frame, ins.operands[0]))
            target = ins.labels[0] if cond & 1 else ins.labels[1]
        else:
            target = ins.labels[0]
        if target not in self._blocks[frame.fn.name]:
            self.trap("invalid_branch", f"branch to missing block %{target}")
        frame.prev_label = frame.label
        frame.label = target
        frame.pc = 0
        watch = self._fn_loop_watch.get(frame.fn.name)
        if watch:
            for header, body in watch:
                if target == header:
                    if frame.prev_label in body:
                        frame.loop_trips[header] = frame.loop_trips.get(header, 0) + 1
                    else:
                        frame.loop_trips[header] = 1

    # -- values -------------------------------------------------------------

    def _value(self, frame: Frame, v: ValueRef):
        k = v.kind
        if k == "reg":
            try:
                return frame.regs[v.name]
            except KeyError:
                raise VmError(f"@{frame.fn.name}: %{v.name} read before definition")
        if k == "int":
            return v.ival
        if k == "float":
            return v.fval
        if k == "global":
            try:
                return self._globals[v.name]
            except KeyError:
                raise VmError(f"unknown global @{v.name}")
        if k == "null":
            return 0
        if k == "gep":
            return self._gep_const_addr(v)
        raise VmError(f"unsupported operand {v.render()}")

    def _gep_addr(self, source: IrType, base: int, idxs: list[int]) -> int:
        if not idxs:
            return base
        addr = base + idxs[0] * source.byte_width()
        t = source
        for iv in idxs[1:]:
            if t.kind == "array":
                addr += iv * t.elem.byte_width()
                t = t.elem
            elif t.kind == "struct":
                addr += t.field_offset(iv)
                t = t.fields[iv]
            else:
                raise VmError("getelementptr walks through a scalar")
        return addr

    def _load_typed(self, addr: int, vtype: IrType):
        mem = self.mem_for(addr)
        k = vtype.kind
        if k == "f64":
            return mem.load_f64(addr)
        if k == "f32":
            return mem.load_f32(addr)
        if k == "ptr":
            return mem.load_int(addr, 64, signed=False)
        if k == "i1":
            return mem.load_int(addr, 8) & 1
        if k in ("i8", "i32", "i64"):
            return mem.load_int(addr, vtype.int_bits())
        raise VmError(f"cannot load type {vtype.render()}")

    def _store_typed_any(self, addr: int, value, vtype: IrType) -> None:
        mem = self.mem_for(addr)
        k = vtype.kind
        if k == "f64":
            mem.store_f64(addr, float(value))
        elif k == "f32":
            mem.store_f32(addr, float(value))
        elif k == "ptr":
            mem.store_int(addr, int(value), 64)
        elif k in ("i1", "i8", "i32", "i64"):
            mem.store_int(addr, int(value), vtype.int_bits())
        else:
            raise VmError(f"cannot store type {vtype.render()}")

    # -- instruction semantics ----------------------------------------------

    def _compute(self, frame: Frame, ins: Instruction):
        op = ins.opcode

        if op == "load":
            addr = int(self._value(frame, ins.operands[0]))
            return self._load_typed(addr, ins.result_type)

        if op == "alloca":
            return self.arena.alloc(ins.aux_type.byte_width(),
                                    ins.align or ins.aux_type.alignment())

        if op == "getelementptr":
            base = int(self._value(frame, ins.operands[0]))
            idxs = [int(self._value(frame, v)) for v in ins.operands[1:]]
            return self._gep_addr(ins.aux_type, base, idxs)

        if op in ("add", "sub", "mul", "sdiv", "srem"):
            a = int(self._value(frame, ins.operands[0]))
            b = int(self._value(frame, ins.operands[1]))
            bits = ins.result_type.int_bits()
            if op == "add":
                return _wrap(a + b, bits)
            if op == "sub":
                return _wrap(a - b, bits)
            if op == "mul":
                return _wrap(a * b, bits)
            if b == 0:
                self.trap("division_by_zero", f"{op} by zero")
            q = abs(a) // abs(b)
            if (a < 0) != (b < 0):
                q = -q
            if op == "sdiv":
                return _wrap(q, bits)
            return _wrap(a - q * b, bits)

        if op in ("fadd", "fsub", "fmul", "fdiv"):
            a = float(self._value(frame, ins.operands[0]))
            b = float(self._value(frame, ins.operands[1]))
            if op == "fadd":
                r = a + b
            elif op == "fsub":
                r = a - b
            elif op == "fmul":
                r = a * b
            else:
                r = self._fdiv(a, b)
            if ins.result_type.kind == "f32":
                r = _to_f32(r)
            return r

        if op == "fneg":
            r = -float(self._value(frame, ins.operands[0]))
            return _to_f32(r) if ins.result_type.kind == "f32" else r

        if op == "icmp":
            return self._icmp(frame, ins)
        if op == "fcmp":
            return self._fcmp(frame, ins)

        if op == "phi":
            if frame.prev_label is None:
                raise VmError("phi in entry block")
            for v, label in zip(ins.operands, ins.labels):
                if label == frame.prev_label:
                    return self._value(frame, v)
            raise VmError(f"phi has no incoming edge from %{frame.prev_label}")

        if op == "select":
            cond = int(self._value(frame, ins.operands[0]))
            pick = ins.operands[1] if cond & 1 else ins.operands[2]
            return self._value(frame, pick)

        if op in ("zext", "trunc", "sext"):
            v = int(self._value(frame, ins.operands[0]))
            src_bits = ins.operands[0].type.int_bits()
            if op == "zext":
                return v & ((1 << src_bits) - 1)
            if op == "trunc":
                return _wrap(v, ins.result_type.int_bits())
            return v  # sext: values are already sign-canonical

        if op == "fptosi":
            v = float(self._value(frame, ins.operands[0]))
            if not math.isfinite(v):
                return 0
            return _wrap(math.trunc(v), ins.result_type.int_bits())

        if op == "sitofp":
            v = float(int(self._value(frame, ins.operands[0])))
            return _to_f32(v) if ins.result_type.kind == "f32" else v

        if op == "fpext":
            return float(self._value(frame, ins.operands[0]))

        if op == "fptrunc":
            return _to_f32(float(self._value(frame, ins.operands[0])))

        if op == "bitcast":
            v = self._value(frame, ins.operands[0])
            src = ins.operands[0].type
            dst = ins.result_type
            if src.is_pointer() and dst.is_pointer():
                return v
            if src.kind == "i64" and dst.kind == "f64":
                return struct.unpack("<d", struct.pack("<q", int(v)))[0]
            if src.kind == "f64" and dst.kind == "i64":
                return _wrap(struct.unpack("<q", struct.pack("<d", float(v)))[0], 64)
            if src.kind == "i32" and dst.kind == "f32":
                return struct.unpack("<f", struct.pack("<i", int(v)))[0]
            if src.kind == "f32" and dst.kind == "i32":
                return _wrap(struct.unpack("<i", struct.pack("<f", float(v)))[0], 32)
            raise VmError(f"bitcast {src.render()} to {dst.render()} unsupported")

        raise VmError(f"opcode {op!r} not executable")

    def _fdiv(self, a: float, b: float) -> float:
        # IEEE semantics: float division never traps
        if b == 0.0:
            if a == 0.0 or math.isnan(a):
                return math.nan
            return math.inf if (a > 0) == (math.copysign(1.0, b) > 0) else -math.inf
        try:
            return a / b
        except OverflowError:
            return math.inf

    def _icmp(self, frame: Frame, ins: Instruction) -> int:
        a = int(self._value(frame, ins.operands[0]))
        b = int(self._value(frame, ins.operands[1]))
        pred = ins.predicate
        t = ins.operands[0].type
        if pred.startswith("u") or pred in ("eq", "ne"):
            bits = 64 if t.is_pointer() else t.int_bits()
            mask = (1 << bits) - 1
            ua, ub = a & mask, b & mask
        if pred == "eq":
            r = ua == ub
        elif pred == "ne":
            r = ua != ub
        elif pred == "sgt":
            r = a > b
        elif pred == "sge":
            r = a >= b
        elif pred == "slt":
            r = a < b
        elif pred == "sle":
            r = a <= b
        elif pred == "ugt":
            r = ua > ub
        elif pred == "uge":
            r = ua >= ub
        elif pred == "ult":
            r = ua < ub
        elif pred == "ule":
            r = ua <= ub
        else:
            raise VmError(f"icmp predicate {pred!r}")
        return 1 if r else 0

    def _fcmp(self, frame: Frame, ins: Instruction) -> int:
        a = float(self._value(frame, ins.operands[0]))
        b = float(self._value(frame, ins.operands[1]))
        pred = ins.predicate
        if pred == "true":
            return 1
        if pred == "false":
            return 0
        unordered = math.isnan(a) or math.isnan(b)
        if pred == "ord":
            return 0 if unordered else 1
        if pred == "uno":
            return 1 if unordered else 0
        base = pred[1:]
        if pred.startswith("u"):
            if unordered:
                return 1
        elif unordered:
            return 0
        if base == "eq":
            r = a == b
        elif base == "ne":
            r = a != b
        elif base == "gt":
            r = a > b
        elif base == "ge":
            r = a >= b
        elif base == "lt":
            r = a < b
        elif base == "le":
            r = a <= b
        else:
            raise VmError(f"fcmp predicate {pred!r}")
        return 1 if r else 0

    # -- hooks ----------------------------------------------------------------

    def _maybe_inject(self, frame: Frame, ins: Instruction, value):
        kind = self._target_kinds.get(ins.index)
        if kind is None:
            return value
        self._exec_counts[ins.index] += 1
        if not self._scope_hit(frame, ins.index):
            return value
        if isinstance(value, float) and not math.isfinite(value):
            if self.strict_nonfinite:
                self.trap("non_finite_fault_target",
                          f"target ID {ins.index} holds {value!r}")
            self.skipped_nonfinite += 1
            return value
        err = sample_error(self.sampler, float(value))
        faulted = apply_fault(value, err, kind)
        self.activations.append(Activation(
            index=ins.index, opcode=ins.opcode, step=self.steps,
            original_hex=value_bits(value, ins.result_type),
            faulted_hex=value_bits(faulted, ins.result_type),
            error=err))
        return faulted

    def _scope_hit(self, frame: Frame, index: int) -> bool:
        mode = self._scope_mode
        if mode == "nth_execution":
            return self._exec_counts[index] in self._scope_k
        if mode == "invocation":
            return frame.inv_ordinal in self._scope_k
        info = self._loop_info.get(index)
        if info is None:
            return False
        header, _body = info
        return frame.loop_trips.get(header, 0) in self._scope_k

    def _trace(self, ins: Instruction, value, vtype: IrType | None) -> None:
        if not self.tracing or ins.index is None:
            return
        if value is None or vtype is None or vtype.is_void():
            bits = "00000000"
        else:
            bits = value_bits(value, vtype)
        self.trace_records.append(TraceRecord(ins.index, ins.opcode, bits))


def run_module(module: IrModule, **kw) -> RunOutcome:
    """Convenience wrapper: one fresh machine, one run from main."""
    return Machine(module, **kw).run()
