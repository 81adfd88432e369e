"""Scenario files: one flat key-value text file covering plant, mission, solver, training.

Unset keys fall back to the standard Mars descent values; unknown keys are
rejected so typos fail loudly.  Angles are written in degrees and the spin
rate in rad/day (matching how such data is usually tabulated) and are
converted to SI at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .plants.mars import SECONDS_PER_DAY, MarsParams, MissionSpec
from .train import CostWeights, TrainConfig

__all__ = ["ScenarioConfig", "ScenarioError", "load_scenario", "default_scenario",
           "scenario_defaults_text"]


class ScenarioError(ValueError):
    """Malformed or unknown scenario content."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Full parameterization of one run: plant, mission, solver, training."""

    params: MarsParams
    mission: MissionSpec
    dt: float = 0.05
    rtol: float = 1.0e-7
    atol: float = 1.0e-9
    pinv_rel_tol: float = 0.005
    R_diag: Tuple[float, float, float] = (10.0, 1.0, 1.0)
    hidden_dims: Tuple[int, int] = (10, 10)
    train: TrainConfig = field(default_factory=TrainConfig)

    def R(self) -> np.ndarray:
        return np.diag(self.R_diag)


_DEFAULT_PARAMS = MarsParams()
_DEFAULT_MISSION = MissionSpec()

# key -> (group, default in file units)
_KEYS = {
    # mission (Table-style values: angles in degrees)
    "h0": ("mission", 2480.0),
    "V0": ("mission", 505.0),
    "gamma0_deg": ("mission", 0.0),
    "s0": ("mission", 11500.0),
    "m0": ("mission", 62000.0),
    "V_fd": ("mission", 2.5),
    "theta_fd_deg": ("mission", 45.0),
    "t_f": ("mission", 43.0),
    # vehicle
    "m_dry": ("vehicle", 51600.0),
    "m_sw": ("vehicle", 1.0),
    "I_sp": ("vehicle", 360.0),
    "beta0": ("vehicle", 379.0),
    "R_LD": ("vehicle", 0.54),
    "sigma_L_deg": ("vehicle", 0.0),
    "T_max": ("vehicle", 8.0e5),
    "T_min": ("vehicle", 1.6e5),
    "eta_min_deg": ("vehicle", -90.0),
    "eta_max_deg": ("vehicle", 90.0),
    "sigma_min_deg": ("vehicle", -180.0),
    "sigma_max_deg": ("vehicle", 180.0),
    "R_diag": ("vehicle", (10.0, 1.0, 1.0)),
    # environment
    "v_w": ("environment", (0.0, 0.0, 0.0)),
    "mu": ("environment", 4.282837e13),
    "R_M": ("environment", 3389.5e3),
    "Omega_rad_per_day": ("environment", 2.0 * np.pi / 1.025957),
    "rho0": ("environment", 0.0263),
    "H_scale": ("environment", 10153.6),
    "g0": ("environment", 9.805),
    # solver
    "dt": ("solver", 0.05),
    "rtol": ("solver", 1.0e-7),
    "atol": ("solver", 1.0e-9),
    "pinv_rel_tol": ("solver", 0.005),
    # policy
    "hidden_dims": ("policy", (10, 10)),
    # training
    "k_rf": ("training", 1.0e6),
    "k_vf": ("training", 1.0e5),
    "k_T": ("training", 1.0),
    "k_theta": ("training", 1.0e-6),
    "learning_rate": ("training", 5.0e-3),
    "beta1": ("training", 0.9),
    "beta2": ("training", 0.999),
    "adam_eps": ("training", 1.0e-8),
    "iterations": ("training", 1500),
    "train_dt": ("training", 0.25),
    "plateau_patience": ("training", 60),
    "lr_decay": ("training", 0.1),
    "max_decays": ("training", 2),
}

_INT_KEYS = {"iterations", "plateau_patience", "max_decays"}
_TUPLE_KEYS = {"R_diag", "v_w", "hidden_dims"}


def _parse_value(key: str, raw: str):
    if key in _TUPLE_KEYS:
        parts = tuple(p.strip() for p in raw.split(","))
        if key == "hidden_dims":
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def _assemble(values: dict) -> ScenarioConfig:
    g = values
    params = MarsParams(
        mu=g["mu"], R_M=g["R_M"],
        Omega=g["Omega_rad_per_day"] / SECONDS_PER_DAY,
        rho0=g["rho0"], H_scale=g["H_scale"], g0=g["g0"],
        v_w=g["v_w"], m_dry=g["m_dry"], m_sw=g["m_sw"], I_sp=g["I_sp"],
        beta0=g["beta0"], cd_area=g["m0"] / g["beta0"], R_LD=g["R_LD"],
        sigma_L=np.deg2rad(g["sigma_L_deg"]),
        T_max=g["T_max"], T_min=g["T_min"],
        eta_min=np.deg2rad(g["eta_min_deg"]),
        eta_max=np.deg2rad(g["eta_max_deg"]),
        sigma_min=np.deg2rad(g["sigma_min_deg"]),
        sigma_max=np.deg2rad(g["sigma_max_deg"]),
    )
    mission = MissionSpec(
        h0=g["h0"], V0=g["V0"], gamma0=np.deg2rad(g["gamma0_deg"]),
        s0=g["s0"], m0=g["m0"], theta_fd=np.deg2rad(g["theta_fd_deg"]),
        V_fd=g["V_fd"], t_f=g["t_f"],
    )
    train_cfg = TrainConfig(
        weights=CostWeights(k_rf=g["k_rf"], k_vf=g["k_vf"], k_T=g["k_T"],
                            k_theta=g["k_theta"]),
        learning_rate=g["learning_rate"], beta1=g["beta1"], beta2=g["beta2"],
        eps=g["adam_eps"], iterations=g["iterations"], dt=g["train_dt"],
        plateau_patience=g["plateau_patience"], lr_decay=g["lr_decay"],
        max_decays=g["max_decays"],
    )
    return ScenarioConfig(
        params=params, mission=mission, dt=g["dt"], rtol=g["rtol"],
        atol=g["atol"], pinv_rel_tol=g["pinv_rel_tol"],
        R_diag=g["R_diag"], hidden_dims=g["hidden_dims"], train=train_cfg,
    )


def default_scenario(**overrides) -> ScenarioConfig:
    """Scenario with the standard Mars descent values; overrides by file key."""
    values = {k: d for k, (_, d) in _KEYS.items()}
    for key, val in overrides.items():
        if key not in _KEYS:
            raise ScenarioError(f"unknown scenario key {key!r}")
        values[key] = val
    return _assemble(values)


def load_scenario(path) -> ScenarioConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys error."""
    values = {k: d for k, (_, d) in _KEYS.items()}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ScenarioError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in text.split("=", 1))
            if key not in _KEYS:
                raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ScenarioError(f"{path}:{lineno}: bad value for {key!r}: {exc}")
    return _assemble(values)


def scenario_defaults_text() -> str:
    """Default scenario in file form, one commented group per section."""
    lines = ["# trajcorr scenario (defaults)"]
    current = None
    for key, (group, default) in _KEYS.items():
        if group != current:
            lines.append(f"\n# {group}")
            current = group
        if isinstance(default, tuple):
            val = ", ".join(repr(float(v)) if not isinstance(v, int) else str(v)
                            for v in default)
        else:
            val = repr(default)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
