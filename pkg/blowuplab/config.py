"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Literal, NamedTuple

from blowuplab.errors import InputError
from blowuplab.odesolver import SolverControl
from blowuplab.pde_oracle import OracleControl
from blowuplab.transform import ProblemSpec, make_problem_spec

Kind = Literal["int", "float", "expr", "floats", "text"]

# key: (kind, default); None defaults are resolved from other keys or left unset
KEYS: dict[str, tuple[Kind, Any]] = {
    "n": ("int", None),
    "h": ("expr", "0"),
    "f": ("expr", None),
    "g": ("expr", None),
    "r0": ("float", 1.0),
    "s0": ("float", 1.0),
    "quad_tol": ("float", 1e-10),
    "r_big": ("float", None),
    "r_min": ("float", None),
    "t0": ("float", None),
    "s_values": ("floats", None),
    "region_r_max": ("float", None),
    "region_s_max": ("float", None),
    "region_grid": ("int", 24),
    "ode_tol": ("float", 1e-10),
    "z_max": ("float", 1e8),
    "rho_tol": ("float", 1e-9),
    "slope_tol": ("float", 1e-11),
    "zero_margin": ("float", 1e-12),
    "max_steps": ("int", 200_000),
    "bvp_nodes": ("int", 401),
    "picard_max": ("int", 200),
    "newton_max": ("int", 50),
    "anchor_t": ("float", None),
    "newton_tol": ("float", 1e-10),
    "output_dir": ("text", "runs"),
}
REQUIRED = ("n", "f")
POSITIVE = ("quad_tol", "ode_tol", "z_max", "rho_tol", "slope_tol", "zero_margin", "newton_tol")
COUNTS = {"region_grid": 2, "max_steps": 1, "bvp_nodes": 3, "picard_max": 0, "newton_max": 1}

_LINE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


class ConfigError(InputError):
    """Raised when a run config cannot be parsed or validated."""


class RunConfig(NamedTuple):
    values: dict[str, Any]
    spec: ProblemSpec
    source: str

    def __getattr__(self, name: str) -> Any:
        values = tuple.__getitem__(self, 0)
        if name in values:
            return values[name]
        raise AttributeError(name)

    @property
    def stem(self) -> str:
        return Path(self.source).stem

    @property
    def r_min_value(self) -> float:
        return self.spec.r0 if self.values["r_min"] is None else self.values["r_min"]

    @property
    def region(self) -> tuple[float, float, float, float]:
        r_max = self.values["region_r_max"]
        s_max = self.values["region_s_max"]
        return (
            self.r_min_value,
            self.spec.s0,
            1e3 * self.spec.r0 if r_max is None else r_max,
            1e3 * self.spec.s0 if s_max is None else s_max,
        )

    def solver_control(self) -> SolverControl:
        v = self.values
        return SolverControl(
            tol=v["ode_tol"],
            z_max=v["z_max"],
            rho_tol=v["rho_tol"],
            slope_tol=v["slope_tol"],
            zero_margin=v["zero_margin"],
            max_steps=v["max_steps"],
            bvp_nodes=v["bvp_nodes"],
            picard_max=v["picard_max"],
            newton_max=v["newton_max"],
        )

    def oracle_control(self) -> OracleControl:
        return OracleControl(tol=self.values["newton_tol"], max_iterations=self.values["newton_max"])

    def to_text(self) -> str:
        """The resolved config, one key per line in sorted order. Unset optional keys are omitted."""
        resolved = dict(self.values)
        resolved["r_big"] = self.spec.r_big
        resolved["r_min"] = self.r_min_value
        resolved["region_r_max"], resolved["region_s_max"] = self.region[2], self.region[3]
        lines = []
        for key in sorted(resolved):
            value = resolved[key]
            if value is not None:
                lines.append(f"{key} = {_format(KEYS[key][0], value)}")
        return "\n".join(lines) + "\n"


def _format(kind: Kind, value: Any) -> str:
    if kind in ("expr", "text"):
        return f'"{value}"'
    if kind == "int":
        return str(value)
    if kind == "floats":
        return ", ".join(format(item, ".17g") for item in value)
    return format(value, ".17g")


def _split_value(raw: str, key: str, line_number: int) -> tuple[str, bool]:
    raw = raw.strip()
    if raw.startswith('"'):
        end = raw.find('"', 1)
        if end < 0:
            raise ConfigError(f"Line {line_number}: unterminated string for key '{key}'")
        rest = raw[end + 1 :].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"Line {line_number}: unexpected text after the value of '{key}': {rest}")
        return raw[1:end], True
    return raw.split("#", 1)[0].strip(), False


def _convert(key: str, text: str, quoted: bool, line_number: int) -> Any:
    kind = KEYS[key][0]
    if kind == "expr":
        if not quoted:
            raise ConfigError(f"Line {line_number}: expression '{key}' must be double-quoted")
        return text
    if kind == "text":
        return text
    if quoted:
        raise ConfigError(f"Line {line_number}: numeric key '{key}' must not be quoted")
    try:
        if kind == "int":
            return int(text)
        if kind == "floats":
            return [float(item) for item in text.split(",")]
        return float(text)
    except ValueError:
        raise ConfigError(f"Line {line_number}: invalid {kind} value for '{key}': {text}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parses a flat `key = value` config. '#' starts a comment outside quoted values.

    Raises:
        ConfigError: On syntax errors, unknown or duplicate keys, missing required keys
            and non-positive tolerances.
        InvalidSpec: If the problem fields violate the ProblemSpec invariants.
        ExprSyntaxError: If an expression does not parse.
    """
    given: dict[str, Any] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _LINE_RE.match(stripped)
        if match is None:
            raise ConfigError(f"Line {line_number}: expected 'key = value', got: {stripped}")
        key, raw = match.groups()
        if key not in KEYS:
            raise ConfigError(f"Line {line_number}: unknown key '{key}'. Valid keys: {', '.join(sorted(KEYS))}")
        if key in given:
            raise ConfigError(f"Line {line_number}: duplicate key '{key}'")
        value, quoted = _split_value(raw, key, line_number)
        given[key] = _convert(key, value, quoted, line_number)

    for key in REQUIRED:
        if key not in given:
            raise ConfigError(f"Missing required key '{key}' in {source}")
    values = {key: given.get(key, default) for key, (_, default) in KEYS.items()}
    for key in POSITIVE:
        if not values[key] > 0.0:
            raise ConfigError(f"Invalid {key}: {values[key]}. Tolerances must be positive")
    for key, minimum in COUNTS.items():
        if values[key] < minimum:
            raise ConfigError(f"Invalid {key}: {values[key]}. Expected at least {minimum}")

    spec = make_problem_spec(
        values["n"],
        values["h"],
        values["f"],
        g=values["g"],
        r0=values["r0"],
        s0=values["s0"],
        quad_tol=values["quad_tol"],
        r_big=values["r_big"],
    )
    return RunConfig(values, spec, source)


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigError(f"Cannot read config {path}: {error}") from None
    return parse_config_text(text, str(path))
