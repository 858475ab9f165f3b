"""Declarative experiment configurations for the command-line harness.

Configs are JSON objects. Unknown keys are rejected anywhere in the tree
(typos must not silently fall back to defaults), defaults are filled in
eagerly, and the fully resolved config is hashed so every output file can
be traced back to the exact inputs that produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gpe import DEFAULT_N_POINTS
from .params import PhysicalParams, ScatteringCase

EXPERIMENT_KINDS = (
    "ground_state",
    "single_mode_exact",
    "single_mode_tw",
    "gpe",
    "multimode_tw",
    "calibrate_chi",
    "scan_omega",
    "q_function",
)
STOCHASTIC_KINDS = ("single_mode_tw", "multimode_tw", "calibrate_chi",
                    "scan_omega")

_COMMON_KEYS = {"kind", "label", "seed", "case", "params", "n_atoms", "out_dir"}
_KIND_KEYS = {
    "ground_state": {"grid"},
    "single_mode_exact": {"chi", "chi_minus", "omega", "split", "t_grid",
                          "grid"},
    "single_mode_tw": {"chi", "omega", "split", "t_grid", "n_traj", "grid",
                       "dt"},
    "gpe": {"grid", "omega", "omega_r", "split", "t_grid", "dt"},
    "multimode_tw": {"grid", "omega", "omega_r", "split", "t_grid", "n_traj",
                     "dt", "correction_mode"},
    "calibrate_chi": {"grid", "split", "t_grid", "n_traj", "dt",
                      "correction_mode", "fit_window"},
    "scan_omega": {"grid", "omega_r", "split", "t_grid", "n_traj", "dt",
                   "correction_mode", "fractions", "chi"},
    "q_function": {"chi", "hamiltonian", "chi_t", "theta_points",
                   "phi_points", "split"},
}

_PARAMS_KEYS = {"mass_amu", "transverse_area", "trap_frequency_hz"}
_GRID_KEYS = {"n_points", "extent"}
_OMEGA_KEYS = {"policy", "fraction", "value", "chi"}
_OMEGA_R_KEYS = {"policy", "value"}
_SPLIT_KEYS = {"policy", "angle"}
_T_GRID_KEYS = {"t_final", "n_times", "times", "chi_t_final"}


@dataclass
class ExperimentConfig:
    """A validated, fully defaulted experiment description."""

    kind: str
    raw: dict = field(repr=False)

    def __getitem__(self, key):
        return self.raw[key]

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def physical_params(self) -> PhysicalParams:
        p = self.raw["params"]
        from .params import ATOMIC_MASS_UNIT
        return PhysicalParams(
            mass=p["mass_amu"] * ATOMIC_MASS_UNIT,
            transverse_area=p["transverse_area"],
            trap_omega_x=2.0 * math.pi * p["trap_frequency_hz"])

    def scattering_case(self) -> ScatteringCase:
        case = self.raw["case"]
        params = self.physical_params()
        if isinstance(case, str):
            return ScatteringCase.from_label(case, a0=params.bohr_radius)
        return ScatteringCase(a_aa=case["a_aa"] * params.bohr_radius,
                              a_bb=case["a_bb"] * params.bohr_radius,
                              a_ab=case["a_ab"] * params.bohr_radius)


def _reject_unknown(mapping: dict, allowed: set, context: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key{'s' if len(unknown) > 1 else ''} "
            f"{', '.join(repr(k) for k in unknown)} in {context}")


def _require_type(value, types, name):
    if not isinstance(value, types):
        raise ConfigError(f"field {name!r} has invalid type {type(value).__name__}")
    return value


def _validate_subdict(raw, key, allowed, defaults):
    sub = raw.get(key, {})
    _require_type(sub, dict, key)
    _reject_unknown(sub, allowed, f"{key!r}")
    merged = dict(defaults)
    merged.update(sub)
    raw[key] = merged
    return merged


def read_config_file(path) -> dict:
    """Read a JSON experiment file without resolving defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"config {path} is not valid JSON at line {err.lineno}, "
            f"column {err.colno}: {err.msg}") from err
    return _require_type(raw, dict, "config")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment file."""
    return resolve_config(read_config_file(path))


def resolve_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping and fill in documented defaults."""
    _require_type(raw, dict, "config")
    raw = json.loads(json.dumps(raw))  # deep copy, JSON-compatible by force
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"'kind' must be one of {', '.join(EXPERIMENT_KINDS)}; got {kind!r}")
    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    _reject_unknown(raw, allowed, "the top-level config")

    if kind in STOCHASTIC_KINDS:
        if "seed" not in raw:
            raise ConfigError(f"seed required for stochastic kind {kind!r}")
        seed = raw["seed"]
        if not isinstance(seed, int) or seed < 0 or seed > 2**64 - 1:
            raise ConfigError("'seed' must be an unsigned 64-bit integer")
    raw.setdefault("seed", 0)
    raw.setdefault("label", "")
    raw.setdefault("out_dir", "runs")
    raw.setdefault("case", "I")
    if isinstance(raw["case"], dict):
        _reject_unknown(raw["case"], {"a_aa", "a_bb", "a_ab"}, "'case'")
        for k in ("a_aa", "a_bb", "a_ab"):
            if k not in raw["case"]:
                raise ConfigError(f"custom 'case' requires field {k!r}")

    _validate_subdict(raw, "params", _PARAMS_KEYS, {
        "mass_amu": 87.0, "transverse_area": 1.0e-10,
        "trap_frequency_hz": 50.0})

    defaults_n_atoms = {"single_mode_exact": 100, "q_function": 100}
    raw.setdefault("n_atoms", defaults_n_atoms.get(kind, 1.0e5))
    if not raw["n_atoms"] >= 1:
        raise ConfigError("'n_atoms' must be at least 1")

    if "grid" in _KIND_KEYS[kind]:
        _validate_subdict(raw, "grid", _GRID_KEYS,
                          {"n_points": DEFAULT_N_POINTS, "extent": None})
        n_points = raw["grid"]["n_points"]
        if (not isinstance(n_points, int) or n_points < 1
                or n_points & (n_points - 1)):
            raise ConfigError("'grid.n_points' must be a power of two")

    if "omega" in allowed:
        omega = _validate_subdict(raw, "omega", _OMEGA_KEYS, {
            "policy": "zero", "fraction": 1.0, "value": 0.0, "chi": None})
        if omega["policy"] not in ("zero", "tnt", "fraction", "explicit"):
            raise ConfigError(f"unknown omega policy {omega['policy']!r}")
    if "omega_r" in allowed:
        omega_r = _validate_subdict(raw, "omega_r", _OMEGA_R_KEYS,
                                    {"policy": "off", "value": 0.0})
        if omega_r["policy"] not in ("off", "auto", "explicit"):
            raise ConfigError(f"unknown omega_r policy {omega_r['policy']!r}")
    if "split" in allowed:
        split = _validate_subdict(raw, "split", _SPLIT_KEYS, {
            "policy": "symmetric", "angle": math.pi / 2})
        if split["policy"] not in ("symmetric", "breathe_together", "explicit"):
            raise ConfigError(f"unknown split policy {split['policy']!r}")

    if "t_grid" in allowed:
        t_defaults = {"single_mode_exact": {"chi_t_final": 0.1, "n_times": 50},
                      "single_mode_tw": {"chi_t_final": 0.1, "n_times": 50},
                      "gpe": {"t_final": 0.05, "n_times": 25},
                      "multimode_tw": {"t_final": 0.03, "n_times": 30},
                      "calibrate_chi": {"t_final": 0.03, "n_times": 30},
                      "scan_omega": {"t_final": 0.025, "n_times": 25}}[kind]
        tg = _validate_subdict(raw, "t_grid", _T_GRID_KEYS, t_defaults)
        has_times = tg.get("times") is not None
        has_final = tg.get("t_final") is not None or tg.get("chi_t_final") is not None
        if has_times == has_final:
            raise ConfigError(
                "'t_grid' needs either explicit 'times' or exactly one of "
                "'t_final'/'chi_t_final' with 'n_times'")
        if has_times:
            times = tg["times"]
            if (not isinstance(times, list) or len(times) == 0
                    or any(not isinstance(t, (int, float)) for t in times)
                    or np.any(np.diff(times) <= 0)):
                raise ConfigError("'t_grid.times' must be strictly increasing numbers")

    if kind == "q_function":
        raw.setdefault("chi", 1.0)
        raw.setdefault("hamiltonian", "oat")
        if raw["hamiltonian"] not in ("oat", "tnt"):
            raise ConfigError("'hamiltonian' must be 'oat' or 'tnt'")
        raw.setdefault("chi_t", [0.0, 0.05, 0.1, 0.3] if raw["hamiltonian"] == "oat"
                       else [0.0, 0.02, 0.04, 0.06])
        raw.setdefault("theta_points", 91)
        raw.setdefault("phi_points", 181)
        _validate_subdict(raw, "split", _SPLIT_KEYS,
                          {"policy": "symmetric", "angle": math.pi / 2})
    else:
        raw.setdefault("chi", None)

    if kind in ("single_mode_exact",):
        raw.setdefault("chi_minus", 0.0)
    if kind in ("single_mode_tw", "multimode_tw", "calibrate_chi", "scan_omega"):
        raw.setdefault("n_traj", 1000)
        if not isinstance(raw["n_traj"], int) or raw["n_traj"] < 2:
            raise ConfigError("'n_traj' must be an integer >= 2")
    if kind in ("multimode_tw", "calibrate_chi", "scan_omega"):
        raw.setdefault("correction_mode", "paper")
        raw.setdefault("dt", None)
    if kind == "single_mode_tw":
        raw.setdefault("dt", None)
    if kind == "gpe":
        raw.setdefault("dt", None)
    if kind == "calibrate_chi":
        raw.setdefault("fit_window", None)
    if kind == "scan_omega":
        raw.setdefault("fractions", [0.7, 0.85, 1.0])
        fr = raw["fractions"]
        if (not isinstance(fr, list) or not fr
                or any(not isinstance(f, (int, float)) or f <= 0 for f in fr)):
            raise ConfigError("'fractions' must be a nonempty list of positives")

    return ExperimentConfig(kind=kind, raw=raw)
