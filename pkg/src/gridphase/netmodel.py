"""MATPOWER case parsing and nodal admittance construction.

Everything is converted to per-unit on the system MVA base at parse time.
Buses are stored sorted by their external id; ``Network.index_of`` maps an
external id to its 0-based row in ``Y``.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "AdmittanceMatrix",
    "Branch",
    "Bus",
    "BusKind",
    "CaseParseError",
    "Network",
    "NetworkValidationError",
    "available_cases",
    "build_admittance",
    "load_case",
    "parse_case",
]

# minimum column counts of the MATPOWER version-2 power flow tables
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}
_KNOWN_TABLES = {"bus", "gen", "branch"}


class CaseParseError(ValueError):
    """Raised when a case file cannot be read. Carries the 1-based line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NetworkValidationError(ValueError):
    pass


class BusKind(enum.Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_demand: float
    q_demand: float
    shunt_g: float
    shunt_b: float
    v_setpoint: float
    base_kv: float
    v_case: float = 1.0
    theta_case: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    name: str | None = None

    def __post_init__(self):
        if not isinstance(self.kind, BusKind):
            raise NetworkValidationError(f"bus {self.id}: bad kind {self.kind!r}")
        if not self.base_kv > 0:
            raise NetworkValidationError(f"bus {self.id}: base_kv must be positive")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    status: bool = True

    def __post_init__(self):
        if not self.tap > 0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: tap must be positive"
            )
        if self.status and self.r == 0 and self.x == 0:
            raise NetworkValidationError(
                f"branch {self.from_bus}-{self.to_bus}: zero series impedance"
            )


@dataclass(frozen=True)
class AdmittanceMatrix:
    Y: np.ndarray

    @property
    def G(self):
        return self.Y.real

    @property
    def B(self):
        return self.Y.imag

    @property
    def n(self):
        return self.Y.shape[0]


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float
    Y: AdmittanceMatrix
    name: str = ""
    pq_indices: np.ndarray = field(init=False)
    pv_indices: np.ndarray = field(init=False)
    slack_index: int = field(init=False)

    def __post_init__(self):
        kinds = [b.kind for b in self.buses]
        slack = [i for i, k in enumerate(kinds) if k is BusKind.SLACK]
        if len(slack) != 1:
            raise NetworkValidationError(
                f"expected exactly one slack bus, found {len(slack)}"
            )
        if self.Y.n != len(self.buses):
            raise NetworkValidationError("admittance dimension != bus count")
        pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
        pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
        for arr in (pq, pv):
            arr.setflags(write=False)
        self.Y.Y.setflags(write=False)
        object.__setattr__(self, "pq_indices", pq)
        object.__setattr__(self, "pv_indices", pv)
        object.__setattr__(self, "slack_index", slack[0])

    @property
    def n(self):
        return len(self.buses)

    @property
    def bus_ids(self):
        return np.array([b.id for b in self.buses], dtype=int)

    def index_of(self, bus_id):
        return _id_map(self.buses)[bus_id]

    @property
    def p_scheduled(self):
        return np.array([b.p_gen - b.p_demand for b in self.buses])

    @property
    def q_scheduled(self):
        return np.array([b.q_gen - b.q_demand for b in self.buses])

    def case_state(self):
        """Voltage magnitudes and angles (radians) stored in the case file.

        PV and slack magnitudes are replaced by their generator setpoints.
        """
        v = np.array([b.v_case for b in self.buses])
        theta = np.array([b.theta_case for b in self.buses])
        regulated = np.array([b.kind is not BusKind.PQ for b in self.buses])
        v[regulated] = [b.v_setpoint for b in self.buses if b.kind is not BusKind.PQ]
        return theta, v

    def flat_state(self):
        theta = np.zeros(self.n)
        theta[self.slack_index] = self.buses[self.slack_index].theta_case
        v = np.array([b.v_setpoint if b.kind is not BusKind.PQ else 1.0
                      for b in self.buses])
        return theta, v

    def to_dict(self):
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [
                {
                    "id": b.id, "kind": b.kind.name, "name": b.name,
                    "p_demand": b.p_demand, "q_demand": b.q_demand,
                    "p_gen": b.p_gen, "q_gen": b.q_gen,
                    "shunt_g": b.shunt_g, "shunt_b": b.shunt_b,
                    "v_setpoint": b.v_setpoint, "base_kv": b.base_kv,
                }
                for b in self.buses
            ],
            "branches": [
                {
                    "from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
                    "b_charging": br.b_charging, "tap": br.tap,
                    "shift": br.shift, "status": br.status,
                }
                for br in self.branches
            ],
            "Y": [[[z.real, z.imag] for z in row] for row in self.Y.Y],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _id_map(buses):
    return {b.id: i for i, b in enumerate(buses)}


def build_admittance(buses, branches):
    """Assemble the bus admittance matrix with the standard pi branch model.

    A branch with off-nominal ratio ``a = tap * exp(j*shift)`` contributes
    ``ys/|a|^2 + j*b/2`` at the from bus, ``ys + j*b/2`` at the to bus and
    ``-ys/conj(a)``, ``-ys/a`` off the diagonal.
    """
    idx = _id_map(buses)
    n = len(buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in branches:
        if not br.status:
            continue
        try:
            f, t = idx[br.from_bus], idx[br.to_bus]
        except KeyError as exc:
            raise NetworkValidationError(
                f"branch {br.from_bus}-{br.to_bus} references unknown bus {exc.args[0]}"
            ) from None
        z = complex(br.r, br.x)
        if z == 0:
            raise NetworkValidationError(
                f"branch {br.from_bus}-{br.to_bus}: zero series impedance"
            )
        ys = 1.0 / z
        a = br.tap * np.exp(1j * br.shift)
        half_b = 0.5j * br.b_charging
        Y[f, f] += (ys + half_b) / (a * np.conj(a))
        Y[t, t] += ys + half_b
        Y[f, t] -= ys / np.conj(a)
        Y[t, f] -= ys / a
    for i, b in enumerate(buses):
        Y[i, i] += complex(b.shunt_g, b.shunt_b)
    return AdmittanceMatrix(Y)


# ---------------------------------------------------------------- parsing

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line):
    # '%' never appears inside numeric tables; string cells are handled apart
    out, quote = [], False
    for ch in line:
        if ch == "'":
            quote = not quote
        if ch == "%" and not quote:
            break
        out.append(ch)
    return "".join(out)


def _read_tables(text):
    """Return ``{name: (rows, first_line)}`` and scalar assignments."""
    lines = text.splitlines()
    tables, scalars = {}, {}
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _ASSIGN.match(raw)
        if not m:
            i += 1
            continue
        name, rhs = m.group(1), m.group(2).strip()
        opener = rhs[:1]
        if opener in "[{":
            closer = "]" if opener == "[" else "}"
            rows, body, start = [], rhs[1:], i + 1
            while True:
                done = closer in body
                if done:
                    body = body[: body.index(closer)]
                for chunk in body.split(";"):
                    if chunk.strip():
                        rows.append((i + 1, chunk.strip()))
                if done:
                    break
                i += 1
                if i >= len(lines):
                    raise CaseParseError(f"unterminated matrix mpc.{name}", start)
                body = _strip_comment(lines[i])
            tables[name] = (rows, start, opener)
        else:
            scalars[name] = (rhs.rstrip(";").strip().strip("'"), i + 1)
        i += 1
    return tables, scalars


def _numeric(name, rows):
    out, width = [], None
    for lineno, chunk in rows:
        try:
            vals = [float(tok) for tok in chunk.replace(",", " ").split()]
        except ValueError:
            raise CaseParseError(f"non-numeric entry in mpc.{name}", lineno) from None
        if width is None:
            width = len(vals)
            if width < _MIN_COLS[name]:
                raise CaseParseError(
                    f"mpc.{name} row has {width} columns, need >= {_MIN_COLS[name]}",
                    lineno,
                )
        elif len(vals) != width:
            raise CaseParseError(
                f"mpc.{name} row has {len(vals)} columns, expected {width}", lineno
            )
        out.append(vals)
    return np.array(out, dtype=float).reshape(len(out), width or _MIN_COLS[name])


def parse_case(text, name=""):
    """Parse MATPOWER version-2 case text into a per-unit :class:`Network`.

    Only ``baseMVA``, ``bus``, ``gen``, ``branch`` and the optional
    ``bus_name`` cell array are read; other tables are skipped with a
    warning. In-service generators are summed per bus, and PV buses left
    without an in-service generator are demoted to PQ.
    """
    tables, scalars = _read_tables(text)
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseParseError(f"missing mpc.{key}")
    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    base_val, base_line = scalars["baseMVA"]
    try:
        base_mva = float(base_val)
    except ValueError:
        raise CaseParseError("baseMVA is not a number", base_line) from None
    if "version" in scalars and scalars["version"][0] != "2":
        raise CaseParseError("only MATPOWER case format version 2 is supported",
                             scalars["version"][1])
    skipped = sorted(set(tables) - _KNOWN_TABLES - {"bus_name"})
    if skipped:
        warnings.warn(f"ignoring case tables: {', '.join(skipped)}", stacklevel=2)

    bus = _numeric("bus", tables["bus"][0])
    gen = _numeric("gen", tables["gen"][0])
    branch = _numeric("branch", tables["branch"][0])

    names = None
    if "bus_name" in tables:
        names = [c.strip().strip("'") for _, c in tables["bus_name"][0]]
        if len(names) != len(bus):
            names = None

    bus_rows = tables["bus"][0]
    ids = bus[:, 0].astype(int)
    seen = {}
    for k, bid in enumerate(ids):
        if bid in seen:
            raise NetworkValidationError(
                f"duplicate bus id {bid} (line {bus_rows[k][0]})"
            )
        seen[bid] = k

    pg = np.zeros(len(bus))
    qg = np.zeros(len(bus))
    vg = {}
    for row, (lineno, _) in zip(gen, tables["gen"][0]):
        gb = int(row[0])
        if gb not in seen:
            raise NetworkValidationError(f"generator at unknown bus {gb} (line {lineno})")
        if row[7] <= 0:
            continue
        k = seen[gb]
        pg[k] += row[1] / base_mva
        qg[k] += row[2] / base_mva
        vg.setdefault(k, row[5])

    buses = []
    for k, row in enumerate(bus):
        btype = int(row[1])
        if btype == 4:
            raise NetworkValidationError(f"isolated bus {ids[k]} is not supported")
        if btype not in (1, 2, 3):
            raise NetworkValidationError(f"bus {ids[k]}: unknown type {btype}")
        kind = BusKind(btype)
        if kind is BusKind.PV and k not in vg:
            kind = BusKind.PQ
        base_kv = row[9] if row[9] > 0 else 1.0
        buses.append(Bus(
            id=int(ids[k]),
            kind=kind,
            p_demand=row[2] / base_mva,
            q_demand=row[3] / base_mva,
            shunt_g=row[4] / base_mva,
            shunt_b=row[5] / base_mva,
            v_setpoint=vg.get(k, row[7]),
            base_kv=base_kv,
            v_case=row[7],
            theta_case=np.deg2rad(row[8]),
            p_gen=pg[k],
            q_gen=qg[k],
            name=names[k] if names else None,
        ))
    if sum(b.kind is BusKind.SLACK for b in buses) != 1:
        raise NetworkValidationError("case must contain exactly one slack bus")

    branches = []
    for row, (lineno, _) in zip(branch, tables["branch"][0]):
        try:
            branches.append(Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                tap=row[8] if row[8] != 0 else 1.0,
                shift=np.deg2rad(row[9]),
                status=bool(row[10] > 0),
            ))
        except NetworkValidationError as exc:
            raise NetworkValidationError(f"{exc} (line {lineno})") from None

    buses.sort(key=lambda b: b.id)
    Y = build_admittance(buses, branches)
    return Network(tuple(buses), tuple(branches), base_mva, Y, name=name)


def available_cases():
    """Names of the case files bundled with the package."""
    root = resources.files("gridphase") / "cases"
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


# short names used in the benchmark tables
CASE_ALIASES = {
    "14": "case14",
    "case24": "case24_ieee_rts",
    "24_ieee_rts": "case24_ieee_rts",
    "ieee30": "case_ieee30",
    "RTS_GMLC": "case_RTS_GMLC",
    "118": "case118",
    "89pegase": "case89pegase",
    "ACTIVSg200": "case_ACTIVSg200",
    "ACTIVSg500": "case_ACTIVSg500",
}


def load_case(name_or_path):
    """Load a bundled case by name (``"case14"``, ``"RTS_GMLC"``) or a ``.m`` file by path."""
    path = Path(name_or_path)
    if path.suffix == ".m" and path.exists():
        return parse_case(path.read_text(), name=path.stem)
    stem = path.stem if path.suffix == ".m" else str(name_or_path)
    stem = CASE_ALIASES.get(stem, stem)
    res = resources.files("gridphase") / "cases" / f"{stem}.m"
    if not res.is_file():
        raise FileNotFoundError(f"no such case: {name_or_path}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_case(res.read_text(), name=stem)
