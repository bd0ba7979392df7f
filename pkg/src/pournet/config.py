"""Run configuration: typed options resolved as defaults < INI file < command-line flags."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

ENV_OUT = "POURNET_OUT"
DEFAULT_OUT = "pournet-out"


def default_out_root() -> str:
    return os.environ.get(ENV_OUT) or DEFAULT_OUT


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_or_none(text):
    return None if text in (None, "", "none", "None") else str(text)


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable[[Any], Any]
    default: Any
    help: str = ""
    choices: Optional[tuple] = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def convert(opt: Option, value):
    if value is None:
        return None
    conv = _bool if opt.type is bool else opt.type
    out = conv(value)
    if opt.choices is not None and out not in opt.choices:
        raise ValueError(f"{opt.flag}: {out!r} is not one of {opt.choices}")
    return out


def read_ini(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cp.read_file(fh)
    return cp


def resolve(command: str, options, flags: dict, config_path=None) -> dict:
    """Merge per-option defaults, the ``[common]`` and ``[<command>]`` INI sections, and flags."""
    file_vals: dict = {}
    if config_path:
        cp = read_ini(config_path)
        known = {o.name for o in options}
        for section in ("common", command):
            if cp.has_section(section):
                for k, v in cp.items(section):
                    key = k.replace("-", "_")
                    if key not in known:
                        if section == command:
                            raise ValueError(f"{config_path}: unknown option {k!r} in [{section}]")
                        continue
                    file_vals[key] = v
    resolved = {}
    for o in options:
        if flags.get(o.name) is not None:
            resolved[o.name] = convert(o, flags[o.name])
        elif o.name in file_vals:
            resolved[o.name] = convert(o, file_vals[o.name])
        else:
            resolved[o.name] = o.default
    return resolved


def write_resolved(path, command: str, resolved: dict) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp[command] = {k: "" if v is None else str(v) for k, v in sorted(resolved.items())}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        cp.write(fh)


str_or_none = _str_or_none
