"""Mission configuration files: flat ``key = value`` sections.

One file per mission; any value can be overridden on the command line with
``--set section.key=value``.  Unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

import configparser
import math

import numpy as np

from .collision import SafetyConfig
from .manager import MissionConfig
from .planner import LiftStrategy
from .simworld import DriftSpec, SensorSpec
from .submaps import SensorModelParams

__all__ = ["load_mission_config", "apply_overrides", "default_config_text"]


def _floats(s: str):
    return tuple(float(x) for x in s.replace(",", " ").split())


def default_config_text() -> str:
    return """\
[mission]
world = breakwater2d
model = unicycle
seed = 0
start = 6.0 -6.0 0.0 0.0
goal_lo = 30.0 -8.0
goal_hi = 34.0 -4.0
max_sim_time = 240.0

[safety]
p_safe = 0.95
alpha = 0.99
p_goal = 0.8
r_body = 0.3
f_unknown = 0.0

[planner]
delta_t_mp = 1.5
delta_t_l = 0.3
delta_t_c = 1.2
n_cp = 20
lift = adaptive
lift_d = 12.0
lift_p = 0.9
lift_d0 = 3.0
lift_growth = 20.0
budget_mode = iterations
lead_iters_per_second = 800
sst_iters_per_second = 500
single_layer = false

[mapping]
resolution = 0.25
delta_t_lm = 30.0
l_free = -0.4
l_occ = 0.85
l_min = -2.0
l_max = 3.5
gamma = 0.8

[sensor]
kind = rotating-2d
max_range = 10.0
angular_resolution_deg = 5.0
period = 1.0
noise_sigma = 0.02
elevation_steps = 5
elevation_max_deg = 30.0

[model]
dt = 0.05
sigma_w = 2e-3 2e-3 4e-3 4e-3
ref_speed_max = 2.0
ref_offset_max = 3.0
t_prop_max = 2.0

[drift]
noise_scale = 1.0
"""


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name.strip(), value.strip())


_KNOWN = {
    "mission": {"world", "model", "seed", "start", "goal_lo", "goal_hi", "max_sim_time"},
    "safety": {"p_safe", "alpha", "p_goal", "r_body", "f_unknown"},
    "planner": {
        "delta_t_mp", "delta_t_l", "delta_t_c", "n_cp", "lift", "lift_d", "lift_p",
        "lift_d0", "lift_growth", "budget_mode", "lead_iters_per_second",
        "sst_iters_per_second", "single_layer",
    },
    "mapping": {"resolution", "delta_t_lm", "l_free", "l_occ", "l_min", "l_max", "gamma"},
    "sensor": {
        "kind", "max_range", "angular_resolution_deg", "period", "noise_sigma",
        "elevation_steps", "elevation_max_deg",
    },
    "model": {"dt", "sigma_w", "kp", "kd", "ref_offset_max", "ref_speed_max",
              "v_max", "omega_max", "q_max", "a_max", "k_v", "k_omega",
              "t_prop_min", "t_prop_max"},
    "drift": {"noise_scale"},
}


def load_mission_config(path: str | None = None, overrides=()) -> MissionConfig:
    parser = configparser.ConfigParser()
    parser.read_string(default_config_text())
    if path is not None:
        with open(path) as f:
            parser.read_file(f)
    if overrides:
        apply_overrides(parser, overrides)

    for section in parser.sections():
        if section not in _KNOWN:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN[section]:
                raise ValueError(f"unknown config key {section}.{key}")

    m = parser["mission"]
    s = parser["safety"]
    p = parser["planner"]
    g = parser["mapping"]
    sn = parser["sensor"]
    md = parser["model"]
    dr = parser["drift"]

    safety = SafetyConfig(
        p_safe=s.getfloat("p_safe"),
        alpha=s.getfloat("alpha"),
        p_goal=s.getfloat("p_goal"),
        r_body=s.getfloat("r_body"),
        f_unknown=s.getfloat("f_unknown"),
    )
    lift = LiftStrategy(
        kind=p.get("lift"),
        d=p.getfloat("lift_d"),
        p=p.getfloat("lift_p"),
        d0=p.getfloat("lift_d0"),
        growth_rate=p.getfloat("lift_growth"),
    )
    sensor = SensorSpec(
        kind=sn.get("kind"),
        max_range=sn.getfloat("max_range"),
        angular_resolution=math.radians(sn.getfloat("angular_resolution_deg")),
        period=sn.getfloat("period"),
        noise_sigma=sn.getfloat("noise_sigma"),
        elevation_steps=sn.getint("elevation_steps"),
        elevation_max=math.radians(sn.getfloat("elevation_max_deg")),
    )
    sensor_model = SensorModelParams(
        l_free=g.getfloat("l_free"),
        l_occ=g.getfloat("l_occ"),
        l_min=g.getfloat("l_min"),
        l_max=g.getfloat("l_max"),
        gamma=g.getfloat("gamma"),
        max_range=sn.getfloat("max_range"),
    )
    model_name = m.get("model")
    model_params = {"dt": md.getfloat("dt")}
    if model_name == "unicycle":
        model_params["sigma_w"] = _floats(md.get("sigma_w"))
        for key in ("kp", "kd", "ref_offset_max", "ref_speed_max", "t_prop_min", "t_prop_max"):
            if md.get(key, fallback=None) is not None:
                model_params[key] = md.getfloat(key)
    else:
        model_params["sigma_w0"] = _floats(md.get("sigma_w"))
        for key in ("v_max", "omega_max", "q_max", "a_max", "k_v", "k_omega",
                    "t_prop_min", "t_prop_max"):
            if md.get(key, fallback=None) is not None:
                model_params[key] = md.getfloat(key)

    return MissionConfig(
        world=m.get("world"),
        model=model_name,
        seed=m.getint("seed"),
        start=_floats(m.get("start")),
        goal_lo=_floats(m.get("goal_lo")),
        goal_hi=_floats(m.get("goal_hi")),
        safety=safety,
        delta_t_mp=p.getfloat("delta_t_mp"),
        delta_t_l=p.getfloat("delta_t_l"),
        delta_t_c=p.getfloat("delta_t_c"),
        n_cp=p.getint("n_cp"),
        max_sim_time=m.getfloat("max_sim_time"),
        resolution=g.getfloat("resolution"),
        delta_t_lm=g.getfloat("delta_t_lm"),
        sensor=sensor,
        sensor_model=sensor_model,
        drift=DriftSpec(noise_scale=dr.getfloat("noise_scale")),
        lift=lift,
        budget_mode=p.get("budget_mode"),
        lead_iters_per_second=p.getfloat("lead_iters_per_second"),
        sst_iters_per_second=p.getfloat("sst_iters_per_second"),
        single_layer=p.getboolean("single_layer"),
        model_params=model_params,
    )
