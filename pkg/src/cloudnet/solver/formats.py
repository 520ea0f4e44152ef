"""LP/MPS text export and import, and external solution files.

Exported names are the readable names with ``(`` and ``,`` turned into ``.``,
the closing parenthesis dropped and anything outside ``[A-Za-z0-9_.]``
replaced by ``_``; names are cut at 255 characters.
"""
from __future__ import annotations

import math
import re
from collections import defaultdict
from enum import Enum

from ..builder import (
    Integrality,
    LinearConstraint,
    MipModel,
    Relation,
    Variable,
    evaluate_objective,
)
from .bnb import MilpSolution, MilpStatus, SolveStats

MAX_NAME = 255


class Format(str, Enum):
    LP = "lp"
    MPS = "mps"


class ExportError(ValueError):
    pass


class ModelParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SolutionFormatError(ModelParseError):
    pass


def export_name(name: str) -> str:
    if "(" in name and name.endswith(")"):
        tag, inner = name[:-1].split("(", 1)
        parts = [tag] + (inner.split(",") if inner else [])
        name = ".".join(parts)
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)[:MAX_NAME]


def _key_from_export(name: str) -> tuple[str, ...]:
    return tuple(name.split("."))


def name_map(model: MipModel) -> tuple[dict[str, str], dict[str, str]]:
    """Exported names for variables and constraints; raises on collisions."""
    maps = []
    for what, names in (("variable", list(model.variables)),
                        ("constraint", [c.name for c in model.constraints])):
        seen: dict[str, list[str]] = defaultdict(list)
        for n in names:
            seen[export_name(n)].append(n)
        clashes = {k: v for k, v in seen.items() if len(v) > 1}
        if what == "constraint":
            clashes.update({k: [k] for k in seen if k == "obj"})
        if clashes:
            listing = "; ".join(f"{k} <- {', '.join(v)}" for k, v in sorted(clashes.items()))
            raise ExportError(f"{what} names collide after sanitisation: {listing}")
        maps.append({v[0]: k for k, v in seen.items()})
    return maps[0], maps[1]


def _num(x: float) -> str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def _terms_text(terms, vnames) -> list[str]:
    out = []
    for n, c in terms:
        sign = "-" if c < 0 else "+"
        out.append(f"{sign} {_num(abs(c))} {vnames[n]}")
    return out


def _wrap(head: str, pieces: list[str], width: int = 200) -> list[str]:
    lines, cur = [], head
    for p in pieces:
        if len(cur) + 1 + len(p) > width and cur.strip():
            lines.append(cur)
            cur = "   "
        cur += " " + p
    lines.append(cur)
    return lines


_LP_REL = {Relation.LE: "<=", Relation.GE: ">=", Relation.EQ: "="}


def _export_lp(model: MipModel, vnames, cnames) -> str:
    lines = ["\\ cloudnet embedding model", "Minimize"]
    obj = [(n, c) for n, c in model.objective.items() if c != 0.0]
    if not obj:
        obj = [(next(iter(model.variables)), 0.0)] if model.variables else []
    lines += _wrap(" obj:", _terms_text(obj, vnames))
    lines.append("Subject To")
    for con in model.constraints:
        terms = list(con.terms) or [(next(iter(model.variables)), 0.0)]
        pieces = _terms_text(terms, vnames) + [_LP_REL[con.relation], _num(con.rhs)]
        lines += _wrap(f" {cnames[con.name]}:", pieces)
    lines.append("Bounds")
    for n, var in model.variables.items():
        vn = vnames[n]
        lo, hi = var.lower, var.upper
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" {vn} free")
        elif lo == hi:
            lines.append(f" {vn} = {_num(lo)}")
        elif math.isinf(hi):
            lines.append(f" {vn} >= {_num(lo)}")
        else:
            lines.append(f" {_num(lo)} <= {vn} <= {_num(hi)}")
    binaries = [vnames[n] for n, v in model.variables.items() if v.integrality is Integrality.BINARY]
    if binaries:
        lines.append("Binaries")
        lines += _wrap("", binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"


_MPS_REL = {Relation.LE: "L", Relation.GE: "G", Relation.EQ: "E"}


def _export_mps(model: MipModel, vnames, cnames) -> str:
    lines = ["NAME cloudnet", "ROWS", " N obj"]
    column_entries: dict[str, list[tuple[str, float]]] = {n: [] for n in model.variables}
    for n, c in model.objective.items():
        if c != 0.0:
            column_entries[n].append(("obj", c))
    for con in model.constraints:
        lines.append(f" {_MPS_REL[con.relation]} {cnames[con.name]}")
        for n, c in con.terms:
            column_entries[n].append((cnames[con.name], c))
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for n, var in model.variables.items():
        is_bin = var.integrality is Integrality.BINARY
        if is_bin != in_int:
            lines.append(f" MARKER{marker} 'MARKER' '{'INTORG' if is_bin else 'INTEND'}'")
            marker += 1
            in_int = is_bin
        entries = column_entries[n] or [("obj", 0.0)]
        for row, c in entries:
            lines.append(f" {vnames[n]} {row} {_num(c)}")
    if in_int:
        lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
    lines.append("RHS")
    for con in model.constraints:
        if con.rhs != 0.0:
            lines.append(f" RHS {cnames[con.name]} {_num(con.rhs)}")
    lines.append("BOUNDS")
    for n, var in model.variables.items():
        vn = vnames[n]
        lo, hi = var.lower, var.upper
        if var.integrality is Integrality.BINARY and lo == 0 and hi == 1:
            lines.append(f" BV BND {vn}")
        elif math.isinf(lo) and math.isinf(hi):
            lines.append(f" FR BND {vn}")
        elif lo == hi:
            lines.append(f" FX BND {vn} {_num(lo)}")
        else:
            if math.isinf(lo):
                lines.append(f" MI BND {vn}")
            elif lo != 0.0 or math.isinf(hi):
                lines.append(f" LO BND {vn} {_num(lo)}")
            if not math.isinf(hi):
                lines.append(f" UP BND {vn} {_num(hi)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def export_model(model: MipModel, fmt: Format | str = Format.LP) -> str:
    """Render ``model`` as CPLEX-LP or free-MPS text."""
    fmt = Format(fmt)
    vnames, cnames = name_map(model)
    if fmt is Format.LP:
        return _export_lp(model, vnames, cnames)
    return _export_mps(model, vnames, cnames)


# -- import ------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(<=|>=|=<|=>|<|>|=|\+|-|:|"
    r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|"
    r"[^\s+\-<>=:]+)")
_NUMBER = re.compile(r"^(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_INF = {"inf", "infinity", "+inf", "+infinity"}
_RELTOK = {"<=": Relation.LE, "=<": Relation.LE, "<": Relation.LE,
           ">=": Relation.GE, "=>": Relation.GE, ">": Relation.GE, "=": Relation.EQ}


def _tokens(text: str, line: int) -> list[str]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ModelParseError(f"cannot tokenise {text[pos:]!r}", line)
        out.append(m.group(1))
        pos = m.end()
    return out


def _value(tok: str, line: int) -> float:
    low = tok.lower()
    if low in _INF:
        return math.inf
    if low in ("-inf", "-infinity"):
        return -math.inf
    try:
        return float(tok)
    except ValueError:
        raise ModelParseError(f"expected a number, got {tok!r}", line) from None


class _Builder:
    def __init__(self):
        self.order: list[str] = []
        self.lo: dict[str, float] = {}
        self.hi: dict[str, float] = {}
        self.binary: set[str] = set()
        self.objective: dict[str, float] = {}
        self.rows: list[tuple[str, list[tuple[str, float]], Relation, float]] = []

    def see(self, name: str) -> None:
        if name not in self.lo:
            self.order.append(name)
            self.lo[name] = 0.0
            self.hi[name] = math.inf

    def model(self) -> MipModel:
        def vname(n):
            key = _key_from_export(n)
            return key, Variable(key, 0.0, 1.0, Integrality.BINARY) if n in self.binary else None

        variables: dict[str, Variable] = {}
        rename: dict[str, str] = {}
        for n in self.order:
            key = _key_from_export(n)
            if n in self.binary:
                lo, hi = max(self.lo[n], 0.0), min(self.hi[n], 1.0)
                var = Variable(key, lo, hi, Integrality.BINARY)
            else:
                var = Variable(key, self.lo[n], self.hi[n], Integrality.CONTINUOUS)
            variables[var.name] = var
            rename[n] = var.name
        constraints = []
        for name, terms, rel, rhs in self.rows:
            key = _key_from_export(name)
            merged: dict[str, float] = {}
            for n, c in terms:
                merged[rename[n]] = merged.get(rename[n], 0.0) + c
            constraints.append(LinearConstraint(
                tuple((n, c) for n, c in merged.items() if c != 0.0), rel, rhs, key[0], key[1:]))
        objective = {rename[n]: c for n, c in self.objective.items() if c != 0.0}
        return MipModel(variables, constraints, objective,
                        symbol_table={n: v.key for n, v in variables.items()})


def _parse_expr(toks: list[str], i: int, line: int, stop=lambda t: t in _RELTOK):
    """Linear terms from ``toks[i:]`` until ``stop``; returns (terms, index)."""
    terms = []
    sign = 1.0
    coef = None
    while i < len(toks) and not stop(toks[i]):
        t = toks[i]
        if t == "+":
            pass
        elif t == "-":
            sign = -sign
        elif _NUMBER.match(t):
            coef = float(t) if coef is None else coef * float(t)
        else:
            terms.append((t, sign * (1.0 if coef is None else coef)))
            sign, coef = 1.0, None
        i += 1
    return terms, i


def _import_lp(text: str) -> MipModel:
    b = _Builder()
    section = None
    buffer: list[tuple[int, str]] = []
    auto = 0

    def flush():
        nonlocal auto
        if not buffer:
            return
        line = buffer[0][0]
        toks = []
        for ln, t in buffer:
            toks += _tokens(t, ln)
        buffer.clear()
        if section == "obj":
            i = 0
            if len(toks) > 1 and toks[1] == ":":
                i = 2
            terms, i = _parse_expr(toks, i, line, stop=lambda t: False)
            for n, c in terms:
                b.see(n)
                b.objective[n] = b.objective.get(n, 0.0) + c
            return
        # constraints: possibly several per buffer
        i = 0
        while i < len(toks):
            name = None
            if i + 1 < len(toks) and toks[i + 1] == ":":
                name = toks[i]
                i += 2
            terms, i = _parse_expr(toks, i, line)
            if i >= len(toks):
                raise ModelParseError("constraint without relation", line)
            rel = _RELTOK[toks[i]]
            i += 1
            sign = 1.0
            while i < len(toks) and toks[i] in "+-":
                sign = -sign if toks[i] == "-" else sign
                i += 1
            if i >= len(toks):
                raise ModelParseError("constraint without right-hand side", line)
            rhs = sign * _value(toks[i], line)
            i += 1
            if name is None:
                auto += 1
                name = f"R{auto}"
            for n, _ in terms:
                b.see(n)
            b.rows.append((name, terms, rel, rhs))

    heads = {
        "minimize": "obj", "minimise": "obj", "minimum": "obj", "min": "obj",
        "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
        "bounds": "bounds", "bound": "bounds",
        "binaries": "bin", "binary": "bin", "bin": "bin",
        "generals": "gen", "general": "gen", "gen": "gen",
        "end": "end",
    }
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        low = " ".join(line.lower().split())
        if low in ("maximize", "maximise", "maximum", "max"):
            raise ModelParseError("only minimisation models are supported", ln)
        if low in heads:
            flush()
            section = heads[low]
            if section == "end":
                break
            continue
        if section in ("obj",):
            buffer.append((ln, line))
        elif section == "st":
            buffer.append((ln, line))
            # a row is complete once it carries a relation and something after it
            toks = []
            for l2, t in buffer:
                toks += _tokens(t, l2)
            rels = [k for k, t in enumerate(toks) if t in _RELTOK]
            if rels and rels[-1] < len(toks) - 1:
                flush()
        elif section == "bounds":
            _lp_bound(b, _tokens(line, ln), ln)
        elif section in ("bin", "gen"):
            for n in line.split():
                b.see(n)
                if section == "gen" and not (b.lo[n] >= 0 and b.hi[n] <= 1):
                    raise ModelParseError(f"general integer {n!r} is not binary", ln)
                b.binary.add(n)
        else:
            raise ModelParseError(f"text outside any section: {line!r}", ln)
    flush()
    return b.model()


def _lp_bound(b: _Builder, toks: list[str], ln: int) -> None:
    # normalise signed numbers: ['-', 'inf'] -> ['-inf']
    merged = []
    k = 0
    while k < len(toks):
        if toks[k] in "+-" and k + 1 < len(toks) and (_NUMBER.match(toks[k + 1]) or toks[k + 1].lower() in ("inf", "infinity")):
            merged.append(toks[k] + toks[k + 1])
            k += 2
        else:
            merged.append(toks[k])
            k += 1
    toks = merged

    def isnum(t):
        low = t.lower().lstrip("+-")
        return bool(_NUMBER.match(low)) or low in ("inf", "infinity")

    if len(toks) == 2 and toks[1].lower() == "free":
        b.see(toks[0])
        b.lo[toks[0]], b.hi[toks[0]] = -math.inf, math.inf
    elif len(toks) == 5 and isnum(toks[0]) and isnum(toks[4]):
        n = toks[2]
        b.see(n)
        b.lo[n], b.hi[n] = _value(toks[0], ln), _value(toks[4], ln)
    elif len(toks) == 3:
        if isnum(toks[2]):
            n, rel, val = toks[0], _RELTOK.get(toks[1]), _value(toks[2], ln)
        elif isnum(toks[0]):
            n, val = toks[2], _value(toks[0], ln)
            rel = {Relation.LE: Relation.GE, Relation.GE: Relation.LE, Relation.EQ: Relation.EQ}[_RELTOK[toks[1]]]
        else:
            raise ModelParseError(f"malformed bound {' '.join(toks)!r}", ln)
        b.see(n)
        if rel is Relation.LE:
            b.hi[n] = val
        elif rel is Relation.GE:
            b.lo[n] = val
        elif rel is Relation.EQ:
            b.lo[n] = b.hi[n] = val
        else:
            raise ModelParseError(f"malformed bound {' '.join(toks)!r}", ln)
    else:
        raise ModelParseError(f"malformed bound {' '.join(toks)!r}", ln)


def _import_mps(text: str) -> MipModel:
    b = _Builder()
    section = None
    row_type: dict[str, str] = {}
    row_order: list[str] = []
    row_terms: dict[str, list[tuple[str, float]]] = {}
    rhs: dict[str, float] = {}
    objective_row = None
    integer = False
    for ln, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        parts = raw.split()
        if not raw[0].isspace():
            head = parts[0].upper()
            if head == "NAME":
                section = "name"
            elif head in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
                section = head.lower()
            elif head == "ENDATA":
                break
            elif head == "OBJSENSE":
                section = "objsense"
                if len(parts) > 1 and parts[1].upper().startswith("MAX"):
                    raise ModelParseError("only minimisation models are supported", ln)
            elif head == "RANGES":
                raise ModelParseError("RANGES section is not supported", ln)
            else:
                raise ModelParseError(f"unknown section {parts[0]!r}", ln)
            continue
        if section == "objsense":
            if parts[0].upper().startswith("MAX"):
                raise ModelParseError("only minimisation models are supported", ln)
        elif section == "rows":
            if len(parts) != 2:
                raise ModelParseError("ROWS entries need a type and a name", ln)
            t, name = parts[0].upper(), parts[1]
            if t == "N":
                if objective_row is None:
                    objective_row = name
                continue
            if t not in ("L", "G", "E"):
                raise ModelParseError(f"unknown row type {t!r}", ln)
            row_type[name] = t
            row_order.append(name)
            row_terms[name] = []
        elif section == "columns":
            if len(parts) >= 3 and parts[1].strip("'\"").upper() == "MARKER":
                tag = parts[2].strip("'\"").upper()
                integer = tag == "INTORG"
                continue
            if len(parts) not in (3, 5):
                raise ModelParseError("COLUMNS entries need name, row, value", ln)
            col = parts[0]
            b.see(col)
            if integer:
                b.binary.add(col)
            for row, val in zip(parts[1::2], parts[2::2]):
                v = _value(val, ln)
                if row == objective_row:
                    b.objective[col] = b.objective.get(col, 0.0) + v
                elif row in row_terms:
                    row_terms[row].append((col, v))
                else:
                    raise ModelParseError(f"unknown row {row!r}", ln)
        elif section == "rhs":
            items = parts[1:] if len(parts) % 2 == 1 else parts
            for row, val in zip(items[::2], items[1::2]):
                if row == objective_row:
                    continue
                if row not in row_type:
                    raise ModelParseError(f"unknown row {row!r}", ln)
                rhs[row] = _value(val, ln)
        elif section == "bounds":
            t = parts[0].upper()
            if t in ("FR", "MI", "PL", "BV"):
                col = parts[-1] if len(parts) in (2, 3) else None
                if col is None:
                    raise ModelParseError("malformed bound", ln)
            else:
                if len(parts) not in (3, 4):
                    raise ModelParseError("malformed bound", ln)
                col, val = parts[-2], _value(parts[-1], ln)
            if col not in b.lo:
                raise ModelParseError(f"bound for unknown column {col!r}", ln)
            if t == "UP":
                b.hi[col] = val
            elif t == "LO":
                b.lo[col] = val
            elif t == "FX":
                b.lo[col] = b.hi[col] = val
            elif t == "FR":
                b.lo[col], b.hi[col] = -math.inf, math.inf
            elif t == "MI":
                b.lo[col] = -math.inf
            elif t == "PL":
                b.hi[col] = math.inf
            elif t == "BV":
                b.lo[col], b.hi[col] = 0.0, 1.0
                b.binary.add(col)
            elif t in ("LI", "UI"):
                b.binary.add(col)
                if t == "LI":
                    b.lo[col] = val
                else:
                    b.hi[col] = val
            else:
                raise ModelParseError(f"unknown bound type {t!r}", ln)
        elif section == "name":
            pass
        else:
            raise ModelParseError("data outside any section", ln)
    rel = {"L": Relation.LE, "G": Relation.GE, "E": Relation.EQ}
    for row in row_order:
        b.rows.append((row, row_terms[row], rel[row_type[row]], rhs.get(row, 0.0)))
    for col in b.binary:
        if b.lo[col] < 0 or b.hi[col] > 1:
            b.hi[col] = min(b.hi[col], 1.0)
            b.lo[col] = max(b.lo[col], 0.0)
    return b.model()


def import_model(text: str, fmt: Format | str = Format.LP) -> MipModel:
    """Parse LP or MPS text into a model named by the exported names."""
    fmt = Format(fmt)
    return _import_lp(text) if fmt is Format.LP else _import_mps(text)


_CBC_HEAD = re.compile(r"^\s*(optimal|infeasible|integer infeasible|stopped|unbounded)\b.*objective value", re.I)


def import_solution(model: MipModel, document: str) -> MilpSolution:
    """Read an external solver's solution back into model variable names.

    Accepted layouts: plain ``name value`` lines, CBC-style listings
    (``index name value [reduced cost]`` after an ``Optimal - objective
    value`` header) and HiGHS solution files.
    """
    vnames, _ = name_map(model)
    lookup = {v: k for k, v in vnames.items()}
    lookup.update({k: k for k in model.variables})
    values: dict[str, float] = {}
    status_word = None
    lines = document.splitlines()

    def assign(name: str, text_value: str, ln: int) -> None:
        target = lookup.get(name)
        if target is None:
            raise SolutionFormatError(f"unknown variable {name!r}", ln)
        try:
            values[target] = float(text_value)
        except ValueError:
            raise SolutionFormatError(f"bad value {text_value!r} for {name!r}", ln) from None

    first = next(((i, l.strip()) for i, l in enumerate(lines) if l.strip()), None)
    if first is None:
        raise SolutionFormatError("empty solution document", 1)
    if first[1] == "Model status":
        status_word = lines[first[0] + 1].strip().lower() if first[0] + 1 < len(lines) else ""
        i = first[0] + 2
        while i < len(lines) and lines[i].strip() != "# Primal solution values":
            i += 1
        i += 1
        count = None
        while i < len(lines):
            s = lines[i].strip()
            i += 1
            if s.startswith("# Columns"):
                try:
                    count = int(s.split()[2])
                except (IndexError, ValueError):
                    raise SolutionFormatError("malformed column count", i) from None
                break
            if s.lower() in ("none", "infeasible"):
                status_word = "infeasible" if s.lower() == "infeasible" else status_word
        if count is None:
            if status_word and "infeasible" in status_word:
                count = 0
            else:
                raise SolutionFormatError("missing '# Columns' section", i)
        for k in range(count):
            ln = i + k + 1
            if i + k >= len(lines):
                raise SolutionFormatError("truncated column listing", ln)
            parts = lines[i + k].split()
            if len(parts) != 2:
                raise SolutionFormatError("expected 'name value'", ln)
            assign(parts[0], parts[1], ln)
    elif _CBC_HEAD.match(first[1]):
        status_word = first[1].split()[0].lower()
        for ln, raw in enumerate(lines[first[0] + 1:], first[0] + 2):
            s = raw.strip()
            if not s:
                continue
            parts = s.lstrip("*").split()
            if len(parts) < 3:
                raise SolutionFormatError("expected 'index name value [reduced]'", ln)
            assign(parts[1], parts[2], ln)
    else:
        for ln, raw in enumerate(lines, 1):
            s = raw.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.split()
            if len(parts) != 2:
                raise SolutionFormatError("expected 'name value'", ln)
            assign(parts[0], parts[1], ln)

    if status_word and "infeasible" in status_word:
        return MilpSolution(MilpStatus.INFEASIBLE, {}, math.inf, math.inf, SolveStats())
    warnings = [f"variable {n} missing from solution, assumed 0" for n in model.variables if n not in values]
    full = {n: values.get(n, 0.0) for n in model.variables}
    for n, var in model.variables.items():
        if var.integrality is Integrality.BINARY:
            full[n] = float(round(full[n]))
    obj = evaluate_objective(model, full)
    optimal = status_word is not None and status_word.startswith("optimal")
    return MilpSolution(MilpStatus.OPTIMAL if optimal else MilpStatus.FEASIBLE, full, obj,
                        obj if optimal else -math.inf, SolveStats(), (), warnings)
