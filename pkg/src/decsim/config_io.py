"""Scenario configuration files.

Scenarios are TOML documents with an explicit schema_version.  Angles are
degrees and delays are milliseconds at this boundary; everything internal
is radians and integer ticks.  A file either names a shipped preset
(optionally overriding selected fields) or spells out the chain and the
per-joint module list.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import tomli

from .chain import ChainConfig, LinkParams
from .control import EstimatorFlags, EstimatorParams, ServoParams
from .scenario import (
    AccelPulse,
    ForceEvent,
    MinimumJerkRamp,
    ModuleSpec,
    ScenarioConfig,
    Sinusoid,
    Waveform,
)
from .sensors import NoiseConfig, SensorConfig

SCHEMA_VERSION = 1


class ConfigIOError(ValueError):
    """Unreadable or invalid scenario file; message names path and field."""


def _fail(path: Path, field: str, why: str) -> None:
    raise ConfigIOError(f"{path}: {field}: {why}")


def _get(table: dict, key: str, kind, path: Path, where: str, default=None,
         required: bool = False):
    if key not in table:
        if required:
            _fail(path, f"{where}.{key}" if where else key, "missing required field")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        _fail(path, f"{where}.{key}" if where else key,
              f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_waveform(table: dict, path: Path, where: str, angular: bool) -> Waveform:
    """Angular waveforms take degrees; translation takes m/s^2."""
    scale = math.radians(1.0) if angular else 1.0
    kind = _get(table, "type", str, path, where, required=True)
    if kind == "none":
        return Waveform()
    if kind == "sinusoid":
        return Sinusoid(
            amplitude=scale * _get(table, "amplitude", float, path, where, required=True),
            frequency=_get(table, "frequency_hz", float, path, where, required=True),
        )
    if kind == "ramp":
        return MinimumJerkRamp(
            target=scale * _get(table, "target", float, path, where, required=True),
            t_start=_get(table, "t_start_s", float, path, where, 0.0),
            duration=_get(table, "duration_s", float, path, where, required=True),
        )
    if kind == "accel-pulse":
        return AccelPulse(
            magnitude=scale * _get(table, "magnitude", float, path, where, required=True),
            t_on=_get(table, "t_on_s", float, path, where, required=True),
            t_off=_get(table, "t_off_s", float, path, where, required=True),
        )
    _fail(path, f"{where}.type", f"unknown waveform type {kind!r}")
    return Waveform()  # unreachable


def _parse_link(table: dict, path: Path, where: str) -> LinkParams:
    return LinkParams(
        mass=_get(table, "mass_kg", float, path, where, required=True),
        length=_get(table, "length_m", float, path, where, required=True),
        com_distance=_get(table, "com_distance_m", float, path, where, required=True),
        inertia_about_com=_get(table, "inertia_kgm2", float, path, where, required=True),
        passive_stiffness=_get(table, "passive_stiffness", float, path, where, 0.0),
        passive_damping=_get(table, "passive_damping", float, path, where, 0.0),
    )


def _parse_chain(table: dict, path: Path) -> ChainConfig:
    kind = _get(table, "kind", str, path, "chain", default="custom")
    if kind == "humanoid":
        from .presets import humanoid_chain

        return humanoid_chain()
    if kind == "sip":
        from .presets import sip_chain

        return sip_chain()
    links = table.get("links")
    if not links:
        _fail(path, "chain.links", "explicit chains need at least one [[chain.links]]")
    return ChainConfig(
        links=tuple(
            _parse_link(lk, path, f"chain.links[{i}]") for i, lk in enumerate(links)
        ),
        gravity=_get(table, "gravity", float, path, "chain", 9.81),
    )


def _parse_estimators(table: dict, path: Path, where: str) -> EstimatorParams:
    base = EstimatorParams()
    kwargs = {}
    deg = math.radians(1.0)
    mapping = {
        "tilt_threshold_deg_s": ("tilt_threshold", deg),
        "tilt_gain": ("tilt_gain", 1.0),
        "gravity_threshold_deg": ("gravity_threshold", deg),
        "gravity_gain": ("gravity_gain", 1.0),
        "gravity_lowpass_hz": ("gravity_lowpass_cutoff", 1.0),
        "accel_threshold_m_s2": ("accel_threshold", 1.0),
        "accel_gain": ("accel_gain", 1.0),
        "accel_lowpass_hz": ("accel_lowpass_cutoff", 1.0),
        "ext_torque_gain": ("ext_torque_gain", 1.0),
        "ext_torque_lowpass_hz": ("ext_torque_lowpass_cutoff", 1.0),
        "ext_torque_threshold_nm": ("ext_torque_threshold", 1.0),
    }
    for key in table:
        if key not in mapping:
            _fail(path, f"{where}.{key}", "unknown estimator field")
        field_name, scale = mapping[key]
        kwargs[field_name] = scale * _get(table, key, float, path, where)
    return replace(base, **kwargs)


def _parse_module(table: dict, path: Path, where: str) -> ModuleSpec:
    spec = ModuleSpec()
    mode = _get(table, "setpoint_mode", str, path, where, spec.setpoint_mode)
    flags = EstimatorFlags(
        tilt=_get(table, "tilt", bool, path, where, True),
        gravity=_get(table, "gravity", bool, path, where, True),
        acceleration=_get(table, "acceleration", bool, path, where, False),
        ext_torque=_get(table, "ext_torque", bool, path, where, False),
    )
    setpoint: Waveform = Waveform()
    prediction = None
    if "setpoint" in table:
        setpoint = _parse_waveform(table["setpoint"], path, f"{where}.setpoint", True)
        if _get(table["setpoint"], "prediction", bool, path, f"{where}.setpoint", False):
            prediction = setpoint
    estimators = EstimatorParams()
    if "estimators" in table:
        estimators = _parse_estimators(
            table["estimators"], path, f"{where}.estimators"
        )
    servo = None
    if "servo" in table:
        sv = table["servo"]
        servo = ServoParams(
            kp=_get(sv, "kp", float, path, f"{where}.servo", required=True),
            ki=_get(sv, "ki", float, path, f"{where}.servo"),
            kd=_get(sv, "kd", float, path, f"{where}.servo"),
            reflexive_share=_get(sv, "reflexive_share", float, path, f"{where}.servo", 0.85),
            passive_share=_get(sv, "passive_share", float, path, f"{where}.servo", 0.15),
        )
    passive_setpoint: Waveform = Waveform()
    if _get(table, "passive_tracks_setpoint", bool, path, where, False):
        passive_setpoint = setpoint
    return ModuleSpec(
        setpoint_mode=mode,
        setpoint=setpoint,
        prediction=prediction,
        flags=flags,
        estimators=estimators,
        servo=servo,
        passive_setpoint=passive_setpoint,
    )


def _parse_sensors(table: dict, path: Path, seed_override: int | None) -> SensorConfig:
    where = "sensors"
    noise = NoiseConfig(
        vestibular_velocity=math.radians(
            _get(table, "vestibular_velocity_noise_deg_s", float, path, where, 0.0)
        ),
        seed=(
            seed_override
            if seed_override is not None
            else _get(table, "seed", int, path, where, 0)
        ),
    )
    ablated = _get(table, "ablated", list, path, where, [])
    return SensorConfig(
        proprio_delay_ticks=_get(table, "proprio_delay_ms", int, path, where, 60),
        vestibular_delay_ticks=_get(table, "vestibular_delay_ms", int, path, where, 180),
        torque_delay_ticks=_get(table, "torque_delay_ms", int, path, where, 180),
        noise=noise,
        ablated=frozenset(ablated),
    )


def load_scenario(path: str | Path, seed_override: int | None = None) -> ScenarioConfig:
    """Parse one scenario file (or bare preset name) into a ScenarioConfig."""
    from .presets import PRESETS

    if isinstance(path, str) and path in PRESETS:
        config = PRESETS[path]()
        if seed_override is not None:
            config.sensors = replace(
                config.sensors,
                noise=replace(config.sensors.noise, seed=seed_override),
            )
        return config

    path = Path(path)
    if not path.exists():
        raise ConfigIOError(f"{path}: scenario file not found")
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigIOError(f"{path}: TOML parse error: {exc}") from exc

    version = _get(doc, "schema_version", int, path, "", required=True)
    if version != SCHEMA_VERSION:
        _fail(path, "schema_version", f"expected {SCHEMA_VERSION}, got {version}")

    preset_name = _get(doc, "preset", str, path, "")
    if preset_name is not None:
        if preset_name not in PRESETS:
            _fail(path, "preset", f"unknown preset {preset_name!r}; "
                  f"choices: {sorted(PRESETS)}")
        config = PRESETS[preset_name]()
    else:
        if "chain" not in doc:
            _fail(path, "chain", "required when no preset is named")
        if "modules" not in doc:
            _fail(path, "modules", "required when no preset is named")
        chain = _parse_chain(doc["chain"], path)
        modules = [
            _parse_module(m, path, f"modules[{i}]")
            for i, m in enumerate(doc["modules"])
        ]
        config = ScenarioConfig(
            chain=chain,
            duration=_get(doc, "duration_s", float, path, "", required=True),
            modules=modules,
        )

    if "duration_s" in doc:
        config.duration = _get(doc, "duration_s", float, path, "")
    if "name" in doc:
        config.name = _get(doc, "name", str, path, "")
    else:
        config.name = preset_name or path.stem
    if "analysis_window_fraction" in doc:
        config.analysis_window_fraction = _get(
            doc, "analysis_window_fraction", float, path, ""
        )
    if "initial_joint_angles_deg" in doc:
        vals = _get(doc, "initial_joint_angles_deg", list, path, "")
        config.initial_joint_angles = np.radians(np.asarray(vals, dtype=float))
    if "platform" in doc:
        plat = doc["platform"]
        if "tilt" in plat:
            config.tilt_waveform = _parse_waveform(
                plat["tilt"], path, "platform.tilt", True
            )
        if "translation" in plat:
            config.translation_waveform = _parse_waveform(
                plat["translation"], path, "platform.translation", False
            )
    if "forces" in doc:
        config.force_events = [
            ForceEvent(
                link_index=_get(f, "link", int, path, f"forces[{i}]", required=True),
                application_height=_get(
                    f, "height_m", float, path, f"forces[{i}]", required=True
                ),
                horizontal_force=_get(
                    f, "force_n", float, path, f"forces[{i}]", required=True
                ),
                t_on=_get(f, "t_on_s", float, path, f"forces[{i}]", required=True),
                t_off=_get(f, "t_off_s", float, path, f"forces[{i}]", required=True),
            )
            for i, f in enumerate(doc["forces"])
        ]
    if "sensors" in doc:
        config.sensors = _parse_sensors(doc["sensors"], path, seed_override)
    elif seed_override is not None:
        config.sensors = replace(
            config.sensors,
            noise=replace(config.sensors.noise, seed=seed_override),
        )

    errors = config.validate()
    if errors:
        raise ConfigIOError(f"{path}: " + "; ".join(errors))
    return config
