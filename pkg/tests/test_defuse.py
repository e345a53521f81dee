import pytest

from lcfi.ir.defuse import IndicesMissing, build_def_use
from lcfi.ir.parser import parse_module
from lcfi.instrument import assign_indices

# hand-derived from the indexed listing of process(): producer index of each
# register, mapped over every register operand
PROCESS_EDGES = {
    (1, 4), (1, 13),
    (2, 5), (2, 16), (2, 18), (2, 25),
    (3, 6), (3, 8), (3, 11), (3, 17), (3, 21), (3, 23),
    (8, 9), (9, 10),
    (11, 12), (12, 14), (13, 14), (14, 15), (15, 16),
    (17, 19), (18, 19),
    (21, 22), (22, 23),
    (25, 26),
}


def test_demo_process_edges(demo_indexed):
    graph = build_def_use(demo_indexed)
    got = {(p, c) for p, c in graph.edges if p <= 26 and c <= 26}
    assert got == PROCESS_EDGES


def test_neighbors_and_opcodes(demo_indexed):
    graph = build_def_use(demo_indexed)
    assert graph.opcode_of[15] == "load"
    assert graph.opcode_of[19] == "call"
    assert graph.successors(15) == [16]
    assert graph.predecessors(19) == [17, 18]
    # element-pointer chain: array slot load feeds the gep feeds the load
    assert graph.successors(13) == [14]
    assert graph.successors(14) == [15]


def test_edges_stay_within_functions(demo_indexed):
    # process is 1..26, main starts at 27; no edge may cross
    graph = build_def_use(demo_indexed)
    for p, c in graph.edges:
        assert (p <= 26) == (c <= 26)


def test_sorted_edges_deterministic(demo_indexed):
    a = build_def_use(demo_indexed).sorted_edges()
    b = build_def_use(demo_indexed).sorted_edges()
    assert a == b == sorted(a)


def test_phi_value_operands_counted_labels_not():
    m = assign_indices(parse_module("""
define i32 @f(i1 %c) {
  br label %loop

loop:
  %n = phi i32 [ 0, %0 ], [ %next, %loop ]
  %next = add i32 %n, 1
  br i1 %c, label %loop, label %done

done:
  ret i32 %n
}
"""))
    graph = build_def_use(m)
    # phi(2) consumes next(3); the back-edge label contributes nothing
    assert (3, 2) in graph.edges
    assert graph.predecessors(2) == [3]


def test_requires_indices(demo_module):
    with pytest.raises(IndicesMissing):
        build_def_use(demo_module)
