"""Scenario files: INI text describing a two-board link experiment.

Example::

    [link]
    scheme = self-heterodyne
    tau = 180e-6

    [fiber_common]
    white_freq_level = 0.1
    seed = 13

    [demod]
    f_int = 50000
    f_out = 1000

Sections ``laser1``, ``laser2``, ``fiber_common``, ``fiber_differential``
and ``aom_offset`` take ``NoiseSpec`` fields.  ``pid`` takes ``ki`` and
``prefilter_cutoff`` (critically damped gains are derived); ``trigger``
takes ``threshold`` and ``check_rate``; ``experiment`` takes ``settle``,
``align_stage``, ``jitter`` and ``amplitude``.  Unknown keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace

from .control import TriggerConfig, critical_pid
from .dsp import DemodConfig, ParameterError
from .link import BoardInstance, SyncExperiment
from .signals import LinkScenario, NoiseSpec

NOISE_SECTIONS = ("laser1", "laser2", "fiber_common", "fiber_differential", "aom_offset")


class ConfigError(ParameterError):
    pass


def _get(section, key, conv):
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from None


def _check_keys(section, allowed):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"[{section.name}] unknown keys: {', '.join(sorted(extra))}")


def _noise(section, default: NoiseSpec) -> NoiseSpec:
    names = {f.name: f.type for f in fields(NoiseSpec)}
    _check_keys(section, names)
    kw = {k: _get(section, k, int if k == "seed" else float) for k in section}
    return replace(default, **kw)


def parse_scenario(text: str) -> SyncExperiment:
    """Build a ``SyncExperiment`` from scenario text."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = set(NOISE_SECTIONS) | {"link", "demod", "pid", "trigger", "experiment"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")

    base = LinkScenario()
    kw = {}
    for name in NOISE_SECTIONS:
        if cp.has_section(name):
            kw[name] = _noise(cp[name], getattr(base, name))
    if cp.has_section("link"):
        sec = cp["link"]
        _check_keys(sec, ("scheme", "tau", "length", "optical_frequency"))
        for k in sec:
            kw[k] = sec[k] if k == "scheme" else _get(sec, k, float)
    scenario = replace(base, **kw)

    demod = BoardInstance().demod
    if cp.has_section("demod"):
        sec = cp["demod"]
        _check_keys(sec, ("nu0", "f_smp", "f_int", "f_out"))
        demod = DemodConfig(**{**demod.to_dict(), **{k: _get(sec, k, float) for k in sec}})
    pid = critical_pid(update_rate=demod.f_out)
    if cp.has_section("pid"):
        sec = cp["pid"]
        _check_keys(sec, ("ki", "prefilter_cutoff"))
        pid = critical_pid(update_rate=demod.f_out, **{k: _get(sec, k, float) for k in sec})
    trigger = TriggerConfig()
    if cp.has_section("trigger"):
        sec = cp["trigger"]
        _check_keys(sec, ("threshold", "check_rate", "edge"))
        trigger = TriggerConfig(**{k: sec[k] if k == "edge" else _get(sec, k, float) for k in sec})

    boards = [BoardInstance(demod=demod, trigger=trigger, pid=pid) for _ in range(2)]
    exp = SyncExperiment(boards[0], boards[1], scenario)
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        _check_keys(sec, ("settle", "align_stage", "jitter", "amplitude"))
        ekw = {}
        for k in sec:
            if k == "align_stage":
                ekw[k] = sec[k]
            elif k == "jitter":
                ekw[k] = _get(sec, k, lambda v: sec.getboolean(k))
            else:
                ekw[k] = _get(sec, k, float)
        exp = replace(exp, **ekw)
    return exp


def load_scenario(path) -> tuple[SyncExperiment, str]:
    """Parse a scenario file; returns the experiment and the raw text."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_scenario(text), text
