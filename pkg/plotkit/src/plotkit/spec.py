"""Figure specs and the line-based spec dialect.

One ``[figure]`` block per figure, same sectioned key = value format as the
simulation configs. Figures visualize schema-v1 CSV columns only; nothing
here recomputes physics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMA_COMMENT = "# vsl-schema v1"

FIGURE_KINDS = ("decay", "profile-overlay", "cauchy", "conservation")


class SpecError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    inputs: tuple                 # CSV paths, resolved by the caller
    output: str                   # image filename
    log_x: bool = True
    log_y: bool = True
    columns: tuple = ()           # decay: which columns to draw
    guides: tuple = (-2.0, -3.0)  # reference slopes on decay plots

    def validate(self):
        if self.kind not in FIGURE_KINDS:
            raise SpecError(f"unknown figure kind {self.kind!r}; "
                            f"expected one of {FIGURE_KINDS}")
        if not self.inputs:
            raise SpecError("figure needs at least one input CSV")
        if not self.output:
            raise SpecError("figure needs an output path")


_KEYS = {"kind", "input", "output", "logx", "logy", "columns", "guides"}


def _parse_bool(value, lineno):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise SpecError(f"line {lineno}: expected a boolean, got {value!r}")


def parse_spec(text):
    """Parse the spec text into a list of FigureSpec."""
    blocks = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[figure]":
                raise SpecError(f"line {lineno}: unknown section {line}")
            current = {}
            blocks.append(current)
            continue
        if current is None:
            raise SpecError(f"line {lineno}: key outside a [figure] section")
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        current[key] = (value, lineno)

    if not blocks:
        raise SpecError("spec declares no [figure] section")

    figures = []
    for block in blocks:
        def take(key, default=None):
            return block[key][0] if key in block else default

        kind = take("kind")
        if kind is None:
            raise SpecError("figure block missing 'kind'")
        fig = FigureSpec(
            kind=kind,
            inputs=tuple(p.strip() for p in take("input", "").split(",") if p.strip()),
            output=take("output", ""),
            log_x=_parse_bool(*block["logx"]) if "logx" in block else True,
            log_y=_parse_bool(*block["logy"]) if "logy" in block else True,
            columns=tuple(c.strip() for c in take("columns", "").split(",") if c.strip()),
            guides=tuple(float(g) for g in take("guides", "-2, -3").split(",") if g.strip()),
        )
        fig.validate()
        figures.append(fig)
    return figures


def read_csv(path):
    """Read a schema-v1 CSV into {column: array}; text columns stay strings."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != SCHEMA_COMMENT:
            raise SpecError(f"{path}: missing schema comment {SCHEMA_COMMENT!r}")
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {}
    for k, name in enumerate(header):
        vals = [row[k] for row in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return cols


def require_columns(cols, names, path):
    for name in names:
        if name not in cols:
            raise SpecError(f"{path}: missing column {name!r}")
