"""Run configuration shared by the library entry points and the CLI.

Config files are flat ``key = value`` text, one setting per line, ``#``
starts a comment. Keys are the long flag names with or without the leading
dashes (``n-compute = 20`` and ``n_compute = 20`` are the same); booleans
accept ``true/false/1/0/yes/no``; lists are comma separated.
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cache import CacheSchedule, Criterion, Strategy
from .errors import ConfigError
from .model import CfgForm, ModelConfig, init_weights


@dataclass
class RunConfig:
    # model dims (ignored when weights are loaded from a file)
    layers: int = 6
    width: int = 64
    heads: int = 4
    n_img: int = 64
    n_cond: int = 16
    n_classes: int = 10
    diff_steps: int = 8
    diff_width: int = 64
    token_dim: int = 16
    gamma: float = 1.0
    cfg_form: str = "paper"
    # decoding and caching
    steps: int = 16
    seed: int = 0
    seeds: list = field(default_factory=list)
    class_id: int = 0
    warmup: int = 3
    period: int = 5
    n_compute: int = 20
    strategy: str = "max-similarity"
    criterion: str = "value"
    token_cache: bool = True
    condition_cache: bool = True
    ratios: list = field(default_factory=list)
    # io
    weights: str = None
    init_seed: int = None
    save_weights: str = None
    report: str = None
    trace: str = None
    grid_out: str = None
    paired_baseline: bool = False
    instrument: bool = False
    capture: bool = False
    jobs: int = 1

    def model_config(self):
        return ModelConfig(
            n_layers=self.layers, width=self.width, n_heads=self.heads,
            n_img=self.n_img, n_cond=self.n_cond, n_classes=self.n_classes,
            gamma=self.gamma, diff_steps=self.diff_steps, diff_width=self.diff_width,
            token_dim=self.token_dim, cfg_form=CfgForm(self.cfg_form),
        )

    def cache_schedule(self):
        return CacheSchedule(
            warmup=self.warmup, period=self.period, n_compute=self.n_compute,
            strategy=Strategy(self.strategy), token_cache=self.token_cache,
            condition_cache=self.condition_cache, criterion=Criterion(self.criterion),
        )

    def validate(self, need_weights=True):
        if self.cfg_form not in [f.value for f in CfgForm]:
            raise ConfigError("cfg_form", f"must be 'paper' or 'conventional', got {self.cfg_form!r}")
        if self.strategy not in [s.value for s in Strategy]:
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}; "
                              f"choose from {[s.value for s in Strategy]}")
        if self.criterion not in [c.value for c in Criterion]:
            raise ConfigError("criterion", f"must be 'value' or 'feature', got {self.criterion!r}")
        if need_weights and self.weights is None and self.init_seed is None:
            raise ConfigError("weights", "no --weights file given and no --init-seed to initialise from")
        if self.weights is not None and not Path(self.weights).is_file():
            raise ConfigError("weights", f"file not found: {self.weights}")
        for name in ("seed", "class_id", "jobs"):
            if getattr(self, name) < (1 if name == "jobs" else 0):
                raise ConfigError(name, f"out of range: {getattr(self, name)}")
        if self.init_seed is not None and self.init_seed < 0:
            raise ConfigError("init_seed", "must be non-negative")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds", "seeds must be non-negative")
        for r in self.ratios:
            if not 0.0 <= r <= 1.0:
                raise ConfigError("ratios", f"cache ratio {r} outside [0, 1]")
        cfg = self.model_config() if self.weights is None else None
        if cfg is not None:
            cfg.validate()
            n = cfg.n
        else:
            n = None
        if self.steps < 1 or (cfg is not None and self.steps > cfg.n_img):
            raise ConfigError("steps", f"must be in [1, n_img], got {self.steps}")
        if cfg is not None and self.class_id >= cfg.n_classes:
            raise ConfigError("class_id", f"must be < n_classes ({cfg.n_classes})")
        self.cache_schedule().validate(n)
        return self

    def load_weights(self):
        from . import io

        if self.weights is not None:
            w = io.load_weights(self.weights, self.gamma, self.cfg_form)
            if self.steps > w.config.n_img:
                raise ConfigError("steps", f"must be <= n_img of the weight file ({w.config.n_img})")
            self.cache_schedule().validate(w.config.n)
            return w
        return init_weights(self.model_config(), self.init_seed)

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name, raw):
    default = _FIELDS[name].default
    kind = type(default) if default is not None and default is not dataclasses.MISSING else None
    if _FIELDS[name].default_factory is not dataclasses.MISSING:
        parse = float if name == "ratios" else int
        try:
            return [parse(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(name, f"bad list {raw!r}") from None
    if name == "init_seed":
        kind = int
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        if kind in (int, float):
            return kind(raw)
    except (KeyError, ValueError):
        raise ConfigError(name, f"cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = key.lstrip("-").replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(key, f"unknown setting (line {lineno})")
        values[name] = _coerce(name, raw)
    return values


def load_config_file(path):
    return parse_config_text(Path(path).read_text())
