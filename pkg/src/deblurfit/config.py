"""Run configuration: one INI-style file with a section per module.

Keys mirror the dataclass field names, values are parsed by the field's
annotated type, and unknown sections or keys are rejected.  A dumped
effective config reloads to an equal RunConfig.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ParameterError
from .frames import DEFAULT_WINDOW
from .kernels import DEFAULT_BANK_COUNTS, DEFAULT_GAMMA, FAMILIES, FAMILY_SYMMETRIC
from .meta import MetaConfig
from .nnet import ExtractorConfig, GeneratorConfig
from .pipeline import PipelineConfig
from .training import FitConfig

_TRUE = frozenset({"1", "true", "yes", "on"})
_FALSE = frozenset({"0", "false", "no", "off"})


@dataclass(frozen=True)
class SelectionConfig:
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class BlurConfig:
    """Kernel-bank composition and the gamma handling around convolution."""

    counts: tuple[int, int, int] = DEFAULT_BANK_COUNTS
    family: str = FAMILY_SYMMETRIC
    gamma: float = DEFAULT_GAMMA
    use_gamma: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ParameterError(f"counts must be 3 values >= 0, got {self.counts}")
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")

    @property
    def effective_gamma(self) -> float:
        """Gamma used around blur; 1.0 (a no-op power) when disabled."""
        return self.gamma if self.use_gamma else 1.0


_SECTIONS = {
    "selection": SelectionConfig,
    "blur": BlurConfig,
    "pipeline": PipelineConfig,
    "generator": GeneratorConfig,
    "extractor": ExtractorConfig,
    "fit": FitConfig,
    "meta": MetaConfig,
}


@dataclass(frozen=True)
class RunConfig:
    selection: SelectionConfig = SelectionConfig()
    blur: BlurConfig = BlurConfig()
    pipeline: PipelineConfig = PipelineConfig()
    generator: GeneratorConfig = GeneratorConfig()
    extractor: ExtractorConfig = ExtractorConfig()
    fit: FitConfig = FitConfig()
    meta: MetaConfig = MetaConfig()

    def __post_init__(self):
        _cross_validate(self)


def _cross_validate(cfg: RunConfig) -> None:
    stride = 2**cfg.generator.levels
    if cfg.pipeline.patch_size % stride:
        raise ConfigError(
            f"patch_size {cfg.pipeline.patch_size} is not divisible by "
            f"2^levels = {stride}"
        )
    sizes = (21, 31, 41)
    active = [s for s, n in zip(sizes, cfg.blur.counts) if n > 0]
    if active and cfg.pipeline.patch_size < max(active):
        raise ConfigError(
            f"patch_size {cfg.pipeline.patch_size} is smaller than the "
            f"largest active kernel size {max(active)}"
        )


def _parse_value(text: str, tp, *, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and args[0] is str:
            return text or None
        raise ConfigError(f"{where}: unsupported option type {tp}")
    if origin is tuple:
        elem = typing.get_args(tp)[0]
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_parse_value(p, elem, where=where) for p in parts)
    if tp is bool:
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{where}: expected a boolean, got {text!r}")
    if tp is int:
        try:
            return int(text.strip())
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {text!r}") from None
    if tp is float:
        try:
            return float(text.strip())
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {text!r}") from None
    if tp is str:
        return text.strip()
    raise ConfigError(f"{where}: unsupported option type {tp}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def _build_section(name: str, cls, options: dict[str, str]):
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in options.items():
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        kwargs[key] = _parse_value(raw, known[key], where=f"[{name}] {key}")
    try:
        return cls(**kwargs)
    except ParameterError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_override(text: str) -> tuple[str, str, str]:
    """Split one 'section.key=value' override."""
    head, sep, value = text.partition("=")
    section, dot, key = head.partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r} in override {text!r}")
    return section, key.strip(), value


def load_config(path=None, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Build a RunConfig from an optional INI file plus overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        raw[section] = dict(parser.items(section))
    for text in overrides:
        section, key, value = parse_override(text)
        raw.setdefault(section, {})[key] = value
    sections = {
        name: _build_section(name, cls, raw.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(**sections)


def config_to_text(cfg: RunConfig) -> str:
    """Render every effective value; load_config on the result round-trips."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _SECTIONS:
        section_cfg = getattr(cfg, name)
        parser[name] = {
            f.name: _format_value(getattr(section_cfg, f.name))
            for f in dataclasses.fields(section_cfg)
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg), encoding="utf-8")
