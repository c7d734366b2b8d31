"""Experiment configuration files (YAML or JSON) with line-level validation.

A config has a master ``seed``, an ``output_dir``, the ``methods`` to run and
four optional sections: ``suite``, ``model``, ``train`` and ``report``. Every
key is checked against the matching dataclass before anything runs; unknown
keys and ill-typed values are reported with the line they appear on.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .synthetic_tasks import SuiteConfig
from .toy_mllm import ModelConfig
from .trainer import Method, TrainRunConfig


class ConfigError(ValueError):
    def __init__(self, source, line, message):
        self.source = source
        self.line = line
        self.message = message
        where = f"{source}:{line}" if line is not None else str(source)
        super().__init__(f"{where}: {message}")


@dataclass
class ReportOptions:
    forward_reference: bool = True  # also run DirectIT so FWD_t can be reported
    charts: bool = False  # write SVG charts next to the JSON report


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    methods: list = field(default_factory=lambda: [Method.FWD_PROMPT])
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainRunConfig = field(default_factory=TrainRunConfig)
    report: ReportOptions = field(default_factory=ReportOptions)

    def train_config(self, method):
        return dataclasses.replace(self.train, method=Method(method), seed=self.seed)

    def model_config(self):
        return dataclasses.replace(self.model, seed=self.seed)

    def suite_config(self):
        return dataclasses.replace(self.suite, seed=self.seed)

    def to_dict(self):
        """Plain-JSON echo of the full configuration, defaults included."""
        def plain(obj):
            out = {}
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if hasattr(v, "value"):
                    v = v.value
                elif isinstance(v, tuple):
                    v = list(v)
                out[f.name] = v
            return out

        skip = {"seed", "method"}
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "methods": [Method(m).value for m in self.methods],
            "suite": {k: v for k, v in plain(self.suite).items() if k not in skip},
            "model": {k: v for k, v in plain(self.model).items() if k not in skip},
            "train": {k: v for k, v in plain(self.train).items() if k not in skip},
            "report": plain(self.report),
        }


# section name -> (dataclass, keys owned elsewhere in the file)
_SECTIONS = {
    "suite": (SuiteConfig, {"seed"}),
    "model": (ModelConfig, {"seed"}),
    "train": (TrainRunConfig, {"seed", "method"}),
    "report": (ReportOptions, set()),
}
_TOP_LEVEL = {"seed", "output_dir", "methods"} | set(_SECTIONS)


def _key_lines(node, prefix=(), out=None):
    """Map each key path in a composed YAML document to its 1-based line."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            out[path + ("<value>",)] = v.start_mark.line + 1
            _key_lines(v, path, out)
    return out


def _check_type(value, default, source, line, name):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        expected = "a boolean"
    elif isinstance(default, int) and not hasattr(default, "value"):
        ok = isinstance(value, int) and not isinstance(value, bool)
        expected = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        expected = "a number"
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)
        expected = "a list of numbers"
    else:
        ok = isinstance(value, str)
        expected = "a string"
    if not ok:
        raise ConfigError(source, line, f"'{name}' must be {expected}, got {value!r}")
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(value)
    return value


def _build_section(name, raw, lines, source):
    cls, reserved = _SECTIONS[name]
    section_line = lines.get((name,))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(source, section_line, f"section '{name}' must be a mapping")
    defaults = cls()
    allowed = {f.name for f in dataclasses.fields(cls)} - reserved
    kwargs = {}
    for key, value in raw.items():
        line = lines.get((name, str(key)))
        if key not in allowed:
            hint = f"; set '{key}' at the top level" if key in reserved else ""
            raise ConfigError(source, line, f"unknown key '{key}' in section '{name}'{hint}; "
                                            f"allowed: {', '.join(sorted(allowed))}")
        kwargs[key] = _check_type(value, getattr(defaults, key), source, line, f"{name}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # point at the first key the message names, else at the section header
        named = [k for k in raw if str(k) in str(exc)]
        line = lines.get((name, str(named[0]))) if named else section_line
        raise ConfigError(source, line, f"invalid '{name}' section: {exc}") from None


def parse_config(text, source="<config>"):
    """Validate ``text`` (YAML, or JSON as a YAML subset) into an :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(source, line, f"cannot parse config: {problem}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(source, 1, "top level must be a mapping")
    lines = _key_lines(node) if node is not None else {}

    for key in raw:
        if key not in _TOP_LEVEL:
            raise ConfigError(source, lines.get((str(key),)),
                              f"unknown top-level key '{key}'; allowed: {', '.join(sorted(_TOP_LEVEL))}")

    cfg = ExperimentConfig()
    if "seed" in raw:
        cfg.seed = _check_type(raw["seed"], 0, source, lines.get(("seed",)), "seed")
    if "output_dir" in raw:
        cfg.output_dir = _check_type(raw["output_dir"], "", source, lines.get(("output_dir",)), "output_dir")
    if "methods" in raw:
        line = lines.get(("methods",))
        methods = raw["methods"]
        if isinstance(methods, str):
            methods = [methods]
        if not isinstance(methods, list) or not methods:
            raise ConfigError(source, line, "'methods' must be a non-empty list of method names")
        parsed = []
        for m in methods:
            try:
                parsed.append(Method(m))
            except ValueError:
                raise ConfigError(source, line, f"unknown method {m!r}; choose from "
                                                f"{', '.join(x.value for x in Method)}") from None
        cfg.methods = parsed
    for name in _SECTIONS:
        if name in raw:
            setattr(cfg, name, _build_section(name, raw[name], lines, source))
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
