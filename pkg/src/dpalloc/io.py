"""CSV data files, synthetic data profiles, and report serialization.

CSV schemas, one row per assignee, header required, row order significant:

    vra:            assignee,vac,lep,lit
    title1:         assignee,eli,exp
    apportionment:  assignee,tot

Reports serialize deterministically: identical reports produce identical
bytes. JSON numbers carry 17 significant digits so parsing a report back
reproduces every float bit-exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .errors import (
    DomainError,
    DuplicateAssignee,
    IoError,
    NegativeTrueCount,
    ParseError,
    SchemaMismatch,
)
from .model import FairnessReport, SCHEMAS, StatMatrix

SYNTH_PROFILES = ("michigan-like", "florida-like", "india-like")
_PROFILE_DEFAULT_N = {"michigan-like": 888, "florida-like": 74, "india-like": 35}
_PROFILE_PROBLEM = {
    "michigan-like": "title1",
    "florida-like": "title1",
    "india-like": "apportionment",
}


def load_csv(path: str, problem: str) -> StatMatrix:
    """Read a true-data CSV for the given problem's schema."""
    if problem not in SCHEMAS:
        raise DomainError(f"unknown problem {problem!r}")
    schema = SCHEMAS[problem]
    expected_header = ["assignee", *schema]
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError("empty file", line=1)
    if rows[0] != expected_header:
        raise SchemaMismatch(
            f"expected header {','.join(expected_header)!r}, got {','.join(rows[0])!r}"
        )
    assignees: list[str] = []
    seen: set[str] = set()
    values: list[list[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expected_header):
            raise ParseError(f"expected {len(expected_header)} fields, got {len(row)}", line=lineno)
        name = row[0]
        if name in seen:
            raise DuplicateAssignee(f"line {lineno}: assignee {name!r} appears twice")
        seen.add(name)
        parsed = []
        for col, field in zip(schema, row[1:]):
            try:
                v = float(field)
            except ValueError as exc:
                raise ParseError(f"column {col!r}: {field!r} is not a number", line=lineno) from exc
            if not np.isfinite(v):
                raise ParseError(f"column {col!r}: {field!r} is not finite", line=lineno)
            if v < 0:
                raise NegativeTrueCount(f"line {lineno}: column {col!r} is negative ({field})")
            parsed.append(v)
        assignees.append(name)
        values.append(parsed)
    if not assignees:
        raise ParseError("no data rows", line=len(rows))
    return StatMatrix(tuple(assignees), schema, np.array(values))


def save_csv(m: StatMatrix, path: str) -> None:
    """Write a StatMatrix in its problem schema; floats use shortest
    round-trip formatting, so loading the file back is value-exact."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["assignee", *m.queries])
            for name, row in zip(m.assignees, m.values):
                writer.writerow([name, *(repr(float(v)) for v in row)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _profile_stream(profile: str, seed: int) -> np.random.Generator:
    material = b"dpalloc.synth." + profile.encode() + seed.to_bytes(8, "little")
    key = int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def synth_generate(profile: str, n: int | None = None, seed: int = 0) -> StatMatrix:
    """Deterministic synthetic data shaped like the study populations.

    michigan-like: many small school districts with a floor of 8 eligible
    students and a heavy right tail. florida-like: fewer districts, floor
    49, milder tail. india-like: state populations spread log-uniformly
    over four orders of magnitude. Expenditure is constant within a
    profile because each profile models a single state.
    """
    if profile not in SYNTH_PROFILES:
        raise DomainError(f"unknown profile {profile!r}; choose from {SYNTH_PROFILES}")
    if n is None:
        n = _PROFILE_DEFAULT_N[profile]
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    gen = _profile_stream(profile, seed)
    if profile == "michigan-like":
        eli = 8.0 + np.floor(gen.lognormal(mean=4.0, sigma=1.6, size=n))
        names = tuple(f"d{i:03d}" for i in range(n))
        values = np.stack([eli, np.ones(n)], axis=1)
        return StatMatrix(names, SCHEMAS["title1"], values)
    if profile == "florida-like":
        eli = 49.0 + np.floor(gen.lognormal(mean=6.0, sigma=1.0, size=n))
        names = tuple(f"d{i:03d}" for i in range(n))
        values = np.stack([eli, np.ones(n)], axis=1)
        return StatMatrix(names, SCHEMAS["title1"], values)
    tot = np.round(10.0 ** gen.uniform(4.0, 8.0, size=n))
    names = tuple(f"s{i:02d}" for i in range(n))
    return StatMatrix(names, SCHEMAS["apportionment"], tot[:, None])


def synth_problem(profile: str) -> str:
    return _PROFILE_PROBLEM[profile]


def _fmt_float(v: float) -> str:
    if v != v or v in (float("inf"), float("-inf")):
        raise DomainError(f"cannot serialize non-finite number {v}")
    return format(v, ".17g")


def _to_json(value, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [pad + "  " + _to_json(v, indent + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            pad + "  " + json.dumps(str(k), ensure_ascii=False) + ": " + _to_json(v, indent + 1)
            for k, v in sorted(value.items())
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, np.floating):
        return _fmt_float(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    raise DomainError(f"cannot serialize {type(value).__name__} in a report")


def emit_report(report: FairnessReport, fmt: str, path: str) -> None:
    """Write a report as canonical JSON or as long-format CSV.

    JSON keys are sorted and floats carry 17 significant digits, so equal
    reports emit identical bytes. The CSV variant holds one row per
    (assignee, epsilon, metric) for direct plotting; aggregates live only
    in the JSON form.
    """
    if fmt == "json":
        doc = {
            "config": report.config_echo,
            "per_assignee": report.per_assignee,
            "aggregates": report.aggregates,
        }
        text = _to_json(doc, 0) + "\n"
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        return
    if fmt == "csv-long":
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["assignee", "epsilon", "metric", "value"])
                for metric in sorted(report.per_assignee):
                    by_eps = report.per_assignee[metric]
                    for eps_key in by_eps:
                        for assignee, value in by_eps[eps_key].items():
                            writer.writerow([
                                assignee,
                                eps_key,
                                metric,
                                "" if value is None else _fmt_float(float(value)),
                            ])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        return
    raise DomainError(f"unknown report format {fmt!r}; use 'json' or 'csv-long'")


def parse_report(path: str) -> FairnessReport:
    """Load a JSON report; parsing an emitted report reproduces it exactly."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid report JSON: {exc}", line=exc.lineno) from exc
    return FairnessReport(
        config_echo=doc.get("config", {}),
        per_assignee=doc.get("per_assignee", {}),
        aggregates=doc.get("aggregates", {}),
    )
