"""Data model for the textual IR subset: types, values, instructions, modules."""

from __future__ import annotations

from dataclasses import dataclass, field

SUPPORTED_OPCODES = frozenset({
    "alloca", "load", "store", "getelementptr",
    "add", "sub", "mul", "sdiv", "srem",
    "fadd", "fsub", "fmul", "fdiv", "fneg",
    "icmp", "fcmp", "br", "phi", "call", "ret",
    "zext", "sext", "trunc", "fptosi", "sitofp",
    "fpext", "fptrunc", "bitcast", "select",
})

TERMINATORS = frozenset({"br", "ret"})

ICMP_PREDICATES = frozenset({
    "eq", "ne", "ugt", "uge", "ult", "ule", "sgt", "sge", "slt", "sle",
})

FCMP_PREDICATES = frozenset({
    "false", "oeq", "ogt", "oge", "olt", "ole", "one", "ord",
    "ueq", "ugt", "uge", "ult", "ule", "une", "uno", "true",
})


@dataclass(frozen=True)
class IrType:
    """One type in the subset: iN, f32/f64, pointer, array, struct, or void.

    Width-bearing integer kinds are spelled like the IR ("i32"); floats are
    normalized to "f32"/"f64" regardless of the "float"/"double" spelling in
    the source text.
    """

    kind: str
    pointee: IrType | None = None
    count: int = 0
    elem: IrType | None = None
    fields: tuple[IrType, ...] = ()

    def is_integer(self) -> bool:
        return self.kind in ("i1", "i8", "i32", "i64")

    def is_float(self) -> bool:
        return self.kind in ("f32", "f64")

    def is_numeric(self) -> bool:
        return self.kind in ("i32", "i64", "f32", "f64")

    def is_pointer(self) -> bool:
        return self.kind == "ptr"

    def is_void(self) -> bool:
        return self.kind == "void"

    def int_bits(self) -> int:
        return int(self.kind[1:])

    def byte_width(self) -> int:
        if self.kind == "i1" or self.kind == "i8":
            return 1
        if self.kind == "i32" or self.kind == "f32":
            return 4
        if self.kind in ("i64", "f64", "ptr"):
            return 8
        if self.kind == "array":
            return self.count * self.elem.byte_width()
        if self.kind == "struct":
            size = 0
            for f in self.fields:
                a = f.alignment()
                size = (size + a - 1) // a * a + f.byte_width()
            a = self.alignment()
            return (size + a - 1) // a * a
        raise ValueError(f"type {self.render()} has no byte width")

    def alignment(self) -> int:
        if self.kind == "array":
            return self.elem.alignment()
        if self.kind == "struct":
            return max((f.alignment() for f in self.fields), default=1)
        return self.byte_width()

    def field_offset(self, index: int) -> int:
        assert self.kind == "struct"
        off = 0
        for i, f in enumerate(self.fields):
            a = f.alignment()
            off = (off + a - 1) // a * a
            if i == index:
                return off
            off += f.byte_width()
        raise IndexError(index)

    def render(self) -> str:
        if self.kind in ("i1", "i8", "i32", "i64", "void"):
            return self.kind
        if self.kind == "f32":
            return "float"
        if self.kind == "f64":
            return "double"
        if self.kind == "ptr":
            return self.pointee.render() + "*"
        if self.kind == "array":
            return f"[{self.count} x {self.elem.render()}]"
        if self.kind == "struct":
            return "{ " + ", ".join(f.render() for f in self.fields) + " }"
        raise ValueError(self.kind)


I1 = IrType("i1")
I8 = IrType("i8")
I32 = IrType("i32")
I64 = IrType("i64")
F32 = IrType("f32")
F64 = IrType("f64")
VOID = IrType("void")


def ptr_to(t: IrType) -> IrType:
    return IrType("ptr", pointee=t)


def array_of(count: int, elem: IrType) -> IrType:
    return IrType("array", count=count, elem=elem)


def struct_of(*fields: IrType) -> IrType:
    return IrType("struct", fields=tuple(fields))


@dataclass(frozen=True)
class ValueRef:
    """An operand: register, global, literal constant, null, or constant gep."""

    kind: str  # "reg" | "global" | "int" | "float" | "null" | "gep"
    type: IrType
    name: str = ""
    ival: int = 0
    fval: float = 0.0
    base: ValueRef | None = None
    gep_source: IrType | None = None
    indices: tuple[ValueRef, ...] = ()

    def is_reg(self) -> bool:
        return self.kind == "reg"

    def render(self) -> str:
        if self.kind == "reg":
            return "%" + self.name
        if self.kind == "global":
            return "@" + self.name
        if self.kind == "int":
            if self.type.kind == "i1":
                return "true" if self.ival else "false"
            return str(self.ival)
        if self.kind == "float":
            return render_float(self.fval)
        if self.kind == "null":
            return "null"
        if self.kind == "gep":
            idx = ", ".join(f"{i.type.render()} {i.render()}" for i in self.indices)
            return (f"getelementptr inbounds ({self.gep_source.render()}, "
                    f"{self.base.type.render()} {self.base.render()}, {idx})")
        raise ValueError(self.kind)


def render_float(x: float) -> str:
    # Short scientific form when it round-trips exactly, raw bits otherwise.
    import struct as _struct

    text = f"{x:.6e}"
    try:
        exact = float(text) == x
    except (OverflowError, ValueError):
        exact = False
    if exact:
        return text
    bits = _struct.unpack(">Q", _struct.pack(">d", x))[0]
    return f"0x{bits:016X}"


def reg(name: str, type: IrType) -> ValueRef:
    return ValueRef("reg", type, name=name)


def glob(name: str, type: IrType) -> ValueRef:
    return ValueRef("global", type, name=name)


def intc(value: int, type: IrType = I32) -> ValueRef:
    return ValueRef("int", type, ival=value)


def floatc(value: float, type: IrType = F64) -> ValueRef:
    return ValueRef("float", type, fval=value)


def nullc(type: IrType) -> ValueRef:
    return ValueRef("null", type)


def gepc(source: IrType, base: ValueRef, indices: tuple[ValueRef, ...],
         type: IrType) -> ValueRef:
    return ValueRef("gep", type, base=base, gep_source=source, indices=indices)


@dataclass
class Instruction:
    """One instruction; `index` is assigned by the instrumenter (1-based)."""

    opcode: str
    result: str | None
    result_type: IrType
    operands: list[ValueRef] = field(default_factory=list)
    predicate: str | None = None          # icmp / fcmp
    callee: str | None = None             # call
    labels: list[str] = field(default_factory=list)  # br targets, phi blocks
    aux_type: IrType | None = None        # alloca/gep source, cast destination
    inbounds: bool = False
    align: int | None = None
    index: int | None = None
    line: int = field(default=0, compare=False)

    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    def has_result(self) -> bool:
        return self.result is not None


@dataclass
class BasicBlock:
    label: str
    instructions: list[Instruction] = field(default_factory=list)

    def terminator(self) -> Instruction | None:
        if self.instructions and self.instructions[-1].is_terminator():
            return self.instructions[-1]
        return None


@dataclass
class IrFunction:
    name: str
    return_type: IrType
    params: list[tuple[str, IrType]] = field(default_factory=list)
    blocks: list[BasicBlock] = field(default_factory=list)

    def block(self, label: str) -> BasicBlock | None:
        for b in self.blocks:
            if b.label == label:
                return b
        return None

    def instructions(self):
        for b in self.blocks:
            yield from b.instructions


@dataclass
class GlobalInit:
    """Initializer of a global: scalar, byte string, element list, or zero."""

    kind: str  # "scalar" | "bytes" | "array" | "zero"
    value: ValueRef | None = None
    data: bytes = b""
    values: tuple[ValueRef, ...] = ()


@dataclass
class GlobalDef:
    name: str
    type: IrType
    init: GlobalInit | None = None
    is_const: bool = False
    external: bool = False
    align: int | None = None


@dataclass
class FnDecl:
    name: str
    return_type: IrType
    param_types: tuple[IrType, ...] = ()
    varargs: bool = False


@dataclass
class IrModule:
    """A parsed module. Treat as immutable once built; the instrumenter

    returns fresh copies instead of mutating in place, so a module can be
    shared across concurrently executing runs.
    """

    source_name: str = ""
    globals: list[GlobalDef] = field(default_factory=list)
    functions: list[IrFunction] = field(default_factory=list)
    declares: list[FnDecl] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list, compare=False)

    def function(self, name: str) -> IrFunction | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def global_def(self, name: str) -> GlobalDef | None:
        for g in self.globals:
            if g.name == name:
                return g
        return None

    def all_instructions(self):
        for f in self.functions:
            for b in f.blocks:
                for ins in b.instructions:
                    yield f, b, ins
