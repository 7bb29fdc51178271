"""Run configuration: an INI-style text file with fixed sections and keys.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comment lines. Numbers are plain decimals (an exponent such as
``1e-8`` is allowed); vectors are comma-separated decimals; booleans are
``true``/``false``. Unknown sections and keys are rejected by name. Keys that
are left out take the defaults below, some of which depend on
``[model] name``. The fully resolved configuration is written back out as
``resolved_config.ini`` so a run can be repeated from it alone.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from moen.errors import ConfigError
from moen.netgain import NetworkShape
from moen.observer import DEFAULT_RIDGE
from moen.systems import MODELS, Scenario, Signal
from moen.training import BB_RULES, GRADIENT_METHODS, EnsembleSpec

_DECIMAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_TRUE, _FALSE = ("true", "yes", "1"), ("false", "no", "0")


def _float(text: str) -> float:
    text = text.strip()
    if not _DECIMAL.match(text):
        raise ValueError(f"not a decimal number: {text!r}")
    return float(text)


def _int(text: str) -> int:
    text = text.strip()
    if not re.match(r"^[+-]?\d+$", text):
        raise ValueError(f"not an integer: {text!r}")
    return int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _vector(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(_float(p) for p in text.split(","))


def _int_list(text: str) -> tuple:
    text = text.strip()
    return tuple(_int(p) for p in text.split(",")) if text else ()


def _choice(*options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _optional_vector(text: str):
    return None if text.strip().lower() in ("", "truth") else _vector(text)


def _show(value) -> str:
    if value is None:
        return "truth"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_show(v) for v in value)
    if isinstance(value, float):
        return repr(value)  # shortest string that round-trips
    return str(value)


_SIGNAL_KIND = _choice("zero", "cosine", "sine")

# Per-model defaults for keys whose sensible value depends on the system.
MODEL_DEFAULTS = {
    "harmonic": {
        ("scenario", "T"): 10.0,
        ("scenario", "x_true_init"): (-0.1548, 0.2969),
        ("scenario", "v_kind"): "cosine",
        ("scenario", "v_amplitude"): 0.1,
        ("scenario", "v_frequency"): 1.2,
        ("scenario", "w_kind"): "sine",
        ("scenario", "w_amplitude"): 0.1,
        ("scenario", "w_frequency"): 0.5,
        ("training", "d"): 20,
        ("training", "gamma_max"): 1.0,
    },
    "duffing": {
        ("scenario", "T"): 15.0,
        ("scenario", "x_true_init"): (0.0646, -0.1465),
        ("scenario", "v_kind"): "cosine",
        ("scenario", "v_amplitude"): 1.0,
        ("scenario", "v_frequency"): 1.2,
        ("scenario", "w_kind"): "zero",
        ("scenario", "w_amplitude"): 0.0,
        ("scenario", "w_frequency"): 0.0,
        ("training", "d"): 5,
        ("training", "gamma_max"): 0.1,
    },
}

# section -> key -> (parser, default). A default of None means "model
# dependent" (MODEL_DEFAULTS) or "derived" (grid_steps, ensemble_center).
SCHEMA = {
    "model": {
        "name": (_choice(*MODELS), "harmonic"),
    },
    "scenario": {
        "T": (_float, None),
        "grid_steps": (_int, None),
        "alpha": (_float, 1.0),
        "q0_scale": (_float, 1.0),
        "x0_prior": (_vector, (0.0, 0.0)),
        "x_true_init": (_vector, None),
        "v_kind": (_SIGNAL_KIND, None),
        "v_amplitude": (_float, None),
        "v_frequency": (_float, None),
        "w_kind": (_SIGNAL_KIND, None),
        "w_amplitude": (_float, None),
        "w_frequency": (_float, None),
    },
    "network": {
        "hidden": (_int, 2),
        "layers": (_int, 2),
        "time_input": (_bool, False),
    },
    "training": {
        "d": (_int, None),
        "iters": (_int, 50),
        "shift_at": (_int, 20),
        "gamma_max": (_float, None),
        "bb_rule": (_choice(*BB_RULES), "alternate"),
        "first_step": (_float, 0.01),
        "gradient": (_choice(*GRADIENT_METHODS), "discrete"),
        "init_seed": (_int, 42),
        "init_scale": (_float, 0.1),
        "ensemble_seed": (_int, 0),
        "ensemble_stddev": (_float, 0.75),
        "ensemble_center": (_optional_vector, None),
    },
    "observer": {
        "alpha_in_gain": (_bool, True),
        "ridge": (_float, DEFAULT_RIDGE),
        "symmetrize": (_bool, False),
    },
    "report": {
        "d_list": (_int_list, (20,)),
        "alpha_list": (_vector, (1.0, 10.0)),
    },
    "output": {
        "out_dir": (str, "out"),
        "plots": (_bool, True),
    },
}

# Command line override name -> (section, key).
OVERRIDES = {
    "alpha": ("scenario", "alpha"),
    "samples": ("training", "d"),
    "iters": ("training", "iters"),
    "seed": ("training", "ensemble_seed"),
    "out_dir": ("output", "out_dir"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict  # (section, key) -> typed value

    def __getitem__(self, item):
        return self.values[item]

    @property
    def model_name(self) -> str:
        return self.values["model", "name"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output", "out_dir"])

    def model(self):
        return MODELS[self.model_name]()

    def scenario(self, alpha: float | None = None) -> Scenario:
        v = self.values
        model = self.model()
        n = model.n
        for key in ("x0_prior", "x_true_init"):
            if len(v["scenario", key]) != n:
                raise ConfigError(f"[scenario] {key} needs {n} entries")
        if not v["scenario", "q0_scale"] > 0:
            raise ConfigError("[scenario] q0_scale must be positive")
        try:
            return Scenario(
                model,
                x0_prior=np.array(v["scenario", "x0_prior"]),
                x_true_init=np.array(v["scenario", "x_true_init"]),
                v=Signal(v["scenario", "v_kind"], v["scenario", "v_amplitude"],
                         v["scenario", "v_frequency"], model.m),
                w=Signal(v["scenario", "w_kind"], v["scenario", "w_amplitude"],
                         v["scenario", "w_frequency"], model.r),
                T=v["scenario", "T"],
                alpha=v["scenario", "alpha"] if alpha is None else alpha,
                Q0=v["scenario", "q0_scale"] * np.eye(n),
                grid_steps=v["scenario", "grid_steps"],
            )
        except ValueError as exc:
            raise ConfigError(f"[scenario] {exc}") from exc

    def network_shape(self) -> NetworkShape:
        v = self.values
        n = self.model().n
        time_input = v["network", "time_input"]
        hidden, layers = v["network", "hidden"], v["network", "layers"]
        if hidden < 1 or layers < 2:
            raise ConfigError("[network] needs hidden >= 1 and layers >= 2")
        dims = (n + int(time_input),) + (hidden,) * (layers - 1) + (n,)
        return NetworkShape(dims, time_input)

    def ensemble(self, x_truth_T, d: int | None = None) -> EnsembleSpec:
        v = self.values
        center = v["training", "ensemble_center"]
        center = tuple(float(c) for c in x_truth_T) if center is None else center
        if len(center) != len(x_truth_T):
            raise ConfigError("[training] ensemble_center has the wrong dimension")
        return EnsembleSpec(
            d=v["training", "d"] if d is None else d,
            center=center,
            stddev=v["training", "ensemble_stddev"],
            seed=v["training", "ensemble_seed"],
        )

    def to_text(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_show(self.values[section, key])}")
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, directory) -> Path:
        path = Path(directory) / "resolved_config.ini"
        path.write_text(self.to_text(), encoding="utf-8", newline="\n")
        return path


def _reader() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keep key case, e.g. T
    return parser


def parse_text(text: str, overrides: dict | None = None, source: str = "<config>") -> RunConfig:
    raw = _reader()
    try:
        raw.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    given = {}
    for section in raw.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, text_value in raw.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            parse = SCHEMA[section][key][0]
            try:
                given[section, key] = parse(text_value)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc

    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name not in OVERRIDES:
            raise ConfigError(f"unknown override {name!r}")
        given[OVERRIDES[name]] = value
    return resolve(given)


def resolve(given: dict) -> RunConfig:
    name = given.get(("model", "name"), SCHEMA["model"]["name"][1])
    model_defaults = MODEL_DEFAULTS[name]
    values = {}
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if (section, key) in given:
                values[section, key] = given[section, key]
            elif (section, key) in model_defaults:
                values[section, key] = model_defaults[section, key]
            else:
                values[section, key] = default
    if values["scenario", "grid_steps"] is None:
        values["scenario", "grid_steps"] = int(round(100 * values["scenario", "T"]))
    _validate(values)
    return RunConfig(values)


def _validate(v: dict) -> None:
    checks = [
        (v["scenario", "T"] > 0, "[scenario] T must be positive"),
        (v["scenario", "grid_steps"] >= 1, "[scenario] grid_steps must be >= 1"),
        (v["scenario", "alpha"] > 0, "[scenario] alpha must be positive"),
        (v["training", "d"] >= 1, "[training] d must be >= 1"),
        (v["training", "iters"] >= 0, "[training] iters must be >= 0"),
        (v["training", "shift_at"] >= 0, "[training] shift_at must be >= 0"),
        (v["training", "gamma_max"] > 0, "[training] gamma_max must be positive"),
        (v["training", "first_step"] > 0, "[training] first_step must be positive"),
        (v["training", "init_scale"] >= 0, "[training] init_scale must be >= 0"),
        (v["training", "ensemble_stddev"] >= 0, "[training] ensemble_stddev must be >= 0"),
        (v["observer", "ridge"] >= 0, "[observer] ridge must be >= 0"),
        (all(d >= 1 for d in v["report", "d_list"]), "[report] d_list entries must be >= 1"),
        (all(a > 0 for a in v["report", "alpha_list"]), "[report] alpha_list entries must be > 0"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_text(text, overrides, source=str(path))
