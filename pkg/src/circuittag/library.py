"""Standard cell library: cell definitions, physical attributes and the text format.

One cell per line::

    NOR2 comb in:(A,B) out:Y fn:!(A | B) phys:(p,a,d,t,pr,l,c,r)
    DFF reg in:(D) out:Q phys:(p,a,d,t,pr,l,c,r)

``#`` starts a comment. The eight physical fields are power (uW), area (um^2),
delay (ns), toggle rate (1/ns), signal probability, load (fF), input
capacitance (fF) and drive resistance (kOhm).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources

from .expr import Const, ExprSyntaxError, parse_expr, to_text, variables

PHYS_FIELDS = ("power", "area", "delay", "toggle_rate", "probability", "load", "capacitance", "resistance")
TIE_CELLS = ("TIE0", "TIE1")
LIBRARY_HEADER = "# cell library v1"


class LibrarySyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def fmt_float(x: float, digits: int = 9) -> str:
    return format(float(x), f".{digits}g")


@dataclass(frozen=True)
class PhysAttrs:
    power: float = 0.0
    area: float = 0.0
    delay: float = 0.0
    toggle_rate: float = 0.0
    probability: float = 0.0
    load: float = 0.0
    capacitance: float = 0.0
    resistance: float = 0.0

    def __post_init__(self):
        for name in PHYS_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.probability > 1:
            raise ValueError("probability must lie in [0, 1]")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name in PHYS_FIELDS)


@dataclass(frozen=True)
class CellDef:
    name: str
    kind: str  # "comb" or "reg"
    inputs: tuple
    output: str
    function: object  # BoolExpr over input pins; None for registers
    phys: PhysAttrs

    def __post_init__(self):
        if self.kind not in ("comb", "reg"):
            raise ValueError(f"cell {self.name}: unknown kind {self.kind!r}")
        pins = list(self.inputs) + [self.output]
        if len(set(pins)) != len(pins):
            raise ValueError(f"cell {self.name}: duplicate pin names")
        if self.kind == "reg":
            if len(self.inputs) != 1 or self.function is not None:
                raise ValueError(f"register cell {self.name} needs one data input and no function")
        else:
            if self.function is None:
                raise ValueError(f"combinational cell {self.name} needs a function")
            extra = set(variables(self.function)) - set(self.inputs)
            if extra:
                raise ValueError(f"cell {self.name}: function uses unknown pins {sorted(extra)}")

    @property
    def is_register(self) -> bool:
        return self.kind == "reg"


def tie_cells() -> list[CellDef]:
    return [
        CellDef("TIE0", "comb", (), "Y", Const(0), PhysAttrs(probability=0.0)),
        CellDef("TIE1", "comb", (), "Y", Const(1), PhysAttrs(probability=1.0)),
    ]


class CellLibrary:
    """Immutable name -> CellDef mapping; TIE0/TIE1 are always present."""

    def __init__(self, cells):
        self._declared = tuple(cells)
        table = {}
        for cell in self._declared:
            if cell.name in table or cell.name in TIE_CELLS:
                raise ValueError(f"duplicate cell name {cell.name}")
            table[cell.name] = cell
        for cell in tie_cells():
            table[cell.name] = cell
        self._cells = table

    def __getitem__(self, name) -> CellDef:
        return self._cells[name]

    def __contains__(self, name) -> bool:
        return name in self._cells

    def __iter__(self):
        return iter(self._cells.values())

    def __len__(self):
        return len(self._cells)

    @property
    def declared(self) -> tuple:
        """Cells in file order, without the built-in tie cells."""
        return self._declared

    def combinational_names(self) -> list[str]:
        return [c.name for c in self if not c.is_register]

    def __eq__(self, other):
        return isinstance(other, CellLibrary) and self._declared == other._declared

    def __hash__(self):
        return hash(self._declared)


_LINE_RE = re.compile(
    r"(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s+(?P<kind>\S+)\s+in:\((?P<ins>[^)]*)\)\s+out:(?P<out>\S+)"
    r"(?:\s+fn:(?P<fn>.*?))?\s+phys:\((?P<phys>[^)]*)\)\s*$"
)


def load_library(text: str) -> CellLibrary:
    cells = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        m = _LINE_RE.fullmatch(line.strip())
        if m is None:
            raise LibrarySyntaxError("malformed cell entry", lineno, indent + 1)
        name, kind = m["name"], m["kind"]
        if kind not in ("comb", "reg"):
            raise LibrarySyntaxError(f"unknown cell kind {kind!r}", lineno, indent + m.start("kind") + 1)
        if name in seen or name in TIE_CELLS:
            raise LibrarySyntaxError(f"duplicate cell name {name}", lineno, indent + 1)
        seen.add(name)
        inputs = tuple(p.strip() for p in m["ins"].split(",") if p.strip())
        function = None
        if m["fn"] is not None:
            try:
                function = parse_expr(m["fn"])
            except ExprSyntaxError as exc:
                raise LibrarySyntaxError(
                    f"malformed function template: {exc}", lineno, indent + m.start("fn") + exc.pos + 1
                ) from None
        try:
            values = [float(v) for v in m["phys"].split(",")]
        except ValueError:
            raise LibrarySyntaxError("bad physical value", lineno, indent + m.start("phys") + 1) from None
        if len(values) != len(PHYS_FIELDS):
            raise LibrarySyntaxError(f"expected {len(PHYS_FIELDS)} physical values", lineno, indent + m.start("phys") + 1)
        try:
            cells.append(CellDef(name, kind, inputs, m["out"], function, PhysAttrs(*values)))
        except ValueError as exc:
            raise LibrarySyntaxError(str(exc), lineno, indent + 1) from None
    return CellLibrary(cells)


def dump_library(lib: CellLibrary) -> str:
    lines = [LIBRARY_HEADER]
    for cell in lib.declared:
        parts = [cell.name, cell.kind, f"in:({','.join(cell.inputs)})", f"out:{cell.output}"]
        if cell.function is not None:
            parts.append(f"fn:{to_text(cell.function)}")
        parts.append("phys:(" + ",".join(fmt_float(v) for v in cell.phys.as_tuple()) + ")")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def demo_library_text() -> str:
    return resources.files("circuittag").joinpath("data/demo.lib").read_text(encoding="utf-8")


def demo_library() -> CellLibrary:
    """The bundled 15-cell library."""
    return load_library(demo_library_text())
