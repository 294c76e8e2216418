import re
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from .exceptions import ConfigError
from .logger import logger
from .moran import MoranConfig
from .smooth import MPMap, TorusExpandingMap, VianaMap
from .symbolic import Potential, ShiftSpace

SECTIONS = ("shift", "phi", "psi", "pressure", "spectrum", "moran", "bs-dim", "mp", "torus", "viana", "maps",
            "spec-gap")
REPEATED_KEYS = {"row", "point", "component"}
LIST_KEYS = {"deltas", "lengths", "thresholds", "copies", "alphas", "multipliers", "sweep"}
WORD_KEY = re.compile(r"^[0-9]+(,[0-9]+)*$")

M = TypeVar("M", bound=BaseModel)


class ShiftSection(BaseModel):
    preset: Optional[Literal["full", "golden-mean"]] = None
    alphabet: Optional[int] = Field(None, ge=2)
    row: List[str] = Field(default_factory=list, description="Transition rows as 0/1 strings")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_source(self):
        if self.preset and self.row:
            raise ValueError("give either preset or row lines, not both")
        if not self.preset and not self.row:
            raise ValueError("shift needs preset or row lines")
        if self.row and self.alphabet is not None and self.alphabet != len(self.row):
            raise ValueError(f"alphabet = {self.alphabet} but {len(self.row)} rows given")
        for r in self.row:
            if not re.fullmatch(r"[01]+", r):
                raise ValueError(f"malformed transition row {r!r}: use 0/1 characters only")
        return self


class PotentialSection(BaseModel):
    memory: int = Field(1, ge=1)
    constant: Optional[float] = None
    indicator: Optional[int] = Field(None, ge=0, description="Symbol s for the indicator of [s]")
    words: Dict[Tuple[int, ...], float] = Field(default_factory=dict)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_source(self):
        given = sum([self.constant is not None, self.indicator is not None, bool(self.words)])
        if given != 1:
            raise ValueError("a potential needs exactly one of constant, indicator or word=value lines")
        return self


class PressureSection(BaseModel):
    n_min: int = Field(8, ge=1)
    n_max: int = Field(20, ge=3)

    model_config = ConfigDict(extra="forbid")


class SpectrumSection(BaseModel):
    alphas: List[float] = Field(default_factory=list)
    alpha_min: Optional[float] = None
    alpha_max: Optional[float] = None
    alpha_step: Optional[float] = Field(None, gt=0.0)
    n_min: int = Field(8, ge=1)
    n_max: int = Field(20, ge=3)
    delta_c: Optional[float] = Field(None, ge=0.0)
    delta_min: Optional[float] = Field(None, gt=0.0)
    grid_resolution: Optional[int] = Field(None, ge=1)
    constrained: bool = True

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_grid(self):
        ranged = [self.alpha_min, self.alpha_max, self.alpha_step]
        if self.alphas and any(v is not None for v in ranged):
            raise ValueError("give either alphas or alpha_min/alpha_max/alpha_step")
        if not self.alphas:
            if any(v is None for v in ranged):
                raise ValueError("spectrum needs alphas or all of alpha_min, alpha_max, alpha_step")
            if self.alpha_max < self.alpha_min:
                raise ValueError("alpha_max must be at least alpha_min")
        return self

    def grid(self) -> List[float]:
        if self.alphas:
            return list(self.alphas)
        count = int(round((self.alpha_max - self.alpha_min) / self.alpha_step))
        return [round(self.alpha_min + i * self.alpha_step, 12) for i in range(count + 1)]


class BsDimSection(BaseModel):
    alpha: Optional[float] = Field(None, description="Level set of phi; whole space when absent")

    model_config = ConfigDict(extra="forbid")


class MapsSection(BaseModel):
    map: Literal["mp", "torus", "viana"]
    n: int = Field(20, ge=1)
    ensemble: int = Field(10_000, ge=1000)
    lo: float = 0.5
    hi: float = 1.0
    coordinate: Optional[int] = Field(None, ge=0)
    bins: Optional[int] = Field(None, ge=1)
    transient: Optional[int] = Field(None, ge=0)
    spectrum_depth: Optional[int] = Field(None, ge=10, le=22)
    alphas: List[float] = Field(default_factory=list)
    point: List[List[float]] = Field(default_factory=list, description="Points echoed with their images")

    model_config = ConfigDict(extra="forbid")


class SpecGapSection(BaseModel):
    map: Literal["mp", "torus"]
    x1: float
    n1: int = Field(..., ge=1)
    x2: float
    n2: int = Field(..., ge=1)
    epsilon: float = Field(..., gt=0.0)
    p_max: int = Field(12, ge=0)
    sweep: List[int] = Field(default_factory=list, description="First-segment lengths for a gap sweep")

    model_config = ConfigDict(extra="forbid")


class ParsedConfig(BaseModel):
    """Sectioned config: raw values with their line numbers, plus validated section dumps"""
    sections: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    lines: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    headers: Dict[str, int] = Field(default_factory=dict)
    validated: Dict[str, Dict[str, Any]] = Field(default_factory=dict,
                                                 description="Sections after validation, defaults filled in")

    def has(self, section: str) -> bool:
        return section in self.sections

    def record(self, section: str, values: Dict[str, Any]) -> None:
        self.validated[section] = values

    def resolved(self) -> Dict[str, Dict[str, Any]]:
        """Validated sections where available, raw strings for the rest"""
        out = {}
        for name, values in self.sections.items():
            out[name] = {
                k: ({",".join(map(str, w)): x for w, x in v.items()} if k == "words" else v)
                for k, v in values.items()
            }
        out.update(self.validated)
        return out


class ConfigValidator:
    @staticmethod
    def parse(text: str) -> ParsedConfig:
        """Split a sectioned key = value file; '#' starts a comment"""
        parsed = ParsedConfig()
        current = None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise ConfigError(f"malformed section header {line!r}", number)
                current = line[1:-1].strip()
                if current not in SECTIONS:
                    raise ConfigError(f"unknown section [{current}]", number)
                if current in parsed.sections:
                    raise ConfigError(f"section [{current}] given twice", number)
                parsed.sections[current] = {}
                parsed.lines[current] = {}
                parsed.headers[current] = number
                continue
            if current is None:
                raise ConfigError("key outside of any section", number)
            if "=" not in line:
                raise ConfigError(f"expected key = value, got {line!r}", number)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ConfigError(f"expected key = value, got {line!r}", number)
            ConfigValidator._store(parsed, current, key, value, number)
        logger.debug(f"parsed config sections: {list(parsed.sections)}")
        return parsed

    @staticmethod
    def _store(parsed: ParsedConfig, section: str, key: str, value: str, number: int) -> None:
        values, lines = parsed.sections[section], parsed.lines[section]
        if section in ("phi", "psi") and WORD_KEY.match(key):
            word = tuple(int(p) for p in key.split(",")) if "," in key else tuple(int(c) for c in key)
            words = values.setdefault("words", {})
            if word in words:
                raise ConfigError(f"word {key} given twice", number)
            words[word] = value
            lines.setdefault("words", number)
            return
        if section == "shift" and key == "row" and not re.fullmatch(r"[01]+", value):
            raise ConfigError(f"malformed transition row {value!r}: use 0/1 characters only", number)
        if key in REPEATED_KEYS:
            item = value if key == "row" else [v.strip() for v in value.split(",")]
            values.setdefault(key, []).append(item)
            lines.setdefault(key, number)
            return
        if key in values:
            raise ConfigError(f"key {key!r} given twice in [{section}]", number)
        values[key] = [v.strip() for v in value.split(",")] if key in LIST_KEYS else value
        lines[key] = number

    @staticmethod
    def section(parsed: ParsedConfig, name: str, model: Type[M], required: bool = True,
                default: Optional[M] = None, record: bool = True) -> Optional[M]:
        """Validate one section into its model; errors carry the offending line"""
        if name not in parsed.sections:
            if required:
                raise ConfigError(f"missing section [{name}]")
            if default is not None and record:
                parsed.record(name, default.model_dump(mode="json"))
            return default
        values = dict(parsed.sections[name])
        if name == "moran" and "component" in values:
            values["components"] = [
                {"weight": c[0], "alpha": c[1]} if isinstance(c, list) and len(c) == 2 else c
                for c in values.pop("component")
            ]
        try:
            result = model(**values)
        except PydanticValidationError as e:
            error = e.errors()[0]
            key = str(error["loc"][0]) if error["loc"] else None
            if key == "components":
                key = "component"
            line = parsed.lines[name].get(key, parsed.headers[name]) if key else parsed.headers[name]
            where = f"[{name}] {key}" if key else f"[{name}]"
            raise ConfigError(f"{where}: {error['msg']}", line)
        if record:
            parsed.record(name, result.model_dump(mode="json"))
        return result

    @staticmethod
    def shift(parsed: ParsedConfig) -> ShiftSpace:
        section = ConfigValidator.section(parsed, "shift", ShiftSection)
        try:
            if section.preset == "golden-mean":
                space = ShiftSpace.golden_mean()
            elif section.preset == "full":
                space = ShiftSpace.full(section.alphabet or 2)
            else:
                space = ShiftSpace.from_rows(section.row, name="config")
        except PydanticValidationError as e:
            raise ConfigError(f"[shift] {e.errors()[0]['msg']}", parsed.lines["shift"].get("row", parsed.headers["shift"]))
        parsed.record("shift", {
            "alphabet_size": space.alphabet_size,
            "rows": space.rows(),
            "name": space.name,
        })
        return space

    @staticmethod
    def potential(parsed: ParsedConfig, name: str, space: ShiftSpace, default: Optional[float] = None) -> Potential:
        """[phi] / [psi] as a Potential; a missing section gives the constant default"""
        if name not in parsed.sections and default is not None:
            pot = Potential.constant(space, default)
        else:
            pot = ConfigValidator._build_potential(parsed, name, space)
        parsed.record(name, {
            "memory": pot.memory,
            "words": {",".join(map(str, w)): v for w, v in sorted(pot.table.items())},
        })
        return pot

    @staticmethod
    def _build_potential(parsed: ParsedConfig, name: str, space: ShiftSpace) -> Potential:
        section = ConfigValidator.section(parsed, name, PotentialSection, record=False)
        try:
            if section.constant is not None:
                return Potential.constant(space, section.constant, section.memory)
            if section.indicator is not None:
                if section.indicator >= space.alphabet_size:
                    raise ConfigError(
                        f"[{name}] indicator symbol {section.indicator} outside alphabet of size {space.alphabet_size}",
                        parsed.lines[name]["indicator"],
                    )
                if section.memory != 1:
                    return Potential.indicator(space, section.indicator).lift(section.memory)
                return Potential.indicator(space, section.indicator)
            return Potential.from_table(space, section.memory, section.words, name=name)
        except PydanticValidationError as e:
            line = parsed.lines[name].get("words", parsed.headers[name])
            raise ConfigError(f"[{name}] {e.errors()[0]['msg']}", line)

    @staticmethod
    def moran(parsed: ParsedConfig) -> MoranConfig:
        return ConfigValidator.section(parsed, "moran", MoranConfig)

    @staticmethod
    def smooth_map(parsed: ParsedConfig, kind: str):
        if kind == "mp":
            return ConfigValidator.section(parsed, "mp", MPMap, required=False, default=MPMap(alpha=0.5))
        if kind == "torus":
            return ConfigValidator.section(parsed, "torus", TorusExpandingMap, required=False,
                                           default=TorusExpandingMap(multipliers=[2]))
        return ConfigValidator.section(parsed, "viana", VianaMap, required=False, default=VianaMap())
