"""Plain-text ``key = value`` run configurations.

Every experiment ships a default file under ``mrfzoom/configs``. Values are
parsed by key; unknown keys are rejected so typos surface early. Blank
values mean "unset" for optional keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .dictionary import ParameterGrid, grid_from_ranges
from .zoom import ZoomConfig

EXPERIMENTS = ("gen-schedule", "gen-dict", "ccmap", "eval", "slice", "noise")


def _floats(text, n=None):
    vals = tuple(float(v) for v in text.split(",") if v.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _words(text):
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(fn):
    return lambda text: fn(text) if text.strip() else None


@dataclass
class RunConfig:
    command: str = "eval"
    schedule: str | None = None
    schedule_n: int = 500
    schedule_seed: int = 7
    t1_range: tuple = (500.0, 2000.0)
    t2_range: tuple = (200.0, 800.0)
    df_range: tuple = (-30.0, 450.0)
    steps: tuple = (10.0, 10.0, 2.0)
    target: tuple = (1400.0, 500.0, 100.0)
    targets: int = 25
    seed: int = 11
    modes: tuple = ("nodict", "dfdict", "fulldict")
    brute: str = "full"
    brute_window: tuple = (550.0, 300.0, 50.0)
    dictionary: str | None = None
    metric: str = "cc"
    final_metric: str | None = None
    omega: float | None = None
    probe: tuple = (1000.0, 30.0)
    init: tuple = (1000.0, 500.0)
    slice: str = "builtin"
    noise_levels: tuple = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
    noise_reps: int = 1
    brute_levels: tuple = (0.4,)
    smooth: tuple = (3, 5)
    smooth_frame: str = "lab"
    calibration_retries: int = 20
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def grid(self) -> ParameterGrid:
        return grid_from_ranges([self.t1_range, self.t2_range, self.df_range], self.steps)

    def zoom(self) -> ZoomConfig:
        return ZoomConfig(omega=self.omega, metric=self.metric, final_metric=self.final_metric,
                          probe_t1=self.probe[0], probe_t2=self.probe[1],
                          t1_init=self.init[0], t2_init=self.init[1])

    def validate(self):
        if self.command not in EXPERIMENTS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.schedule is not None and not Path(self.schedule).is_file():
            raise FileNotFoundError(f"schedule file not found: {self.schedule}")
        if self.dictionary is not None and self.command != "gen-dict" and \
                not Path(self.dictionary).is_file():
            raise FileNotFoundError(f"dictionary file not found: {self.dictionary}")
        if self.slice != "builtin" and not Path(self.slice).is_file():
            raise FileNotFoundError(f"slice file not found: {self.slice}")
        if self.brute not in ("full", "window", "none"):
            raise ValueError(f"brute must be full, window or none, got {self.brute!r}")
        bad = set(self.modes) - {"nodict", "dfdict", "fulldict"}
        if bad:
            raise ValueError(f"unknown zoom modes {sorted(bad)}")
        if any(k not in (3, 5) for k in self.smooth):
            raise ValueError("smoothing windows must be 3 or 5")
        self.zoom()
        self.grid()
        return self


PARSERS = {
    "command": str.strip,
    "schedule": _opt(str.strip),
    "schedule_n": int,
    "schedule_seed": int,
    "t1_range": lambda t: _floats(t, 2),
    "t2_range": lambda t: _floats(t, 2),
    "df_range": lambda t: _floats(t, 2),
    "steps": lambda t: _floats(t, 3),
    "target": lambda t: _floats(t, 3),
    "targets": int,
    "seed": int,
    "modes": _words,
    "brute": str.strip,
    "brute_window": lambda t: _floats(t, 3),
    "dictionary": _opt(str.strip),
    "metric": str.strip,
    "final_metric": _opt(str.strip),
    "omega": _opt(float),
    "probe": lambda t: _floats(t, 2),
    "init": lambda t: _floats(t, 2),
    "slice": str.strip,
    "noise_levels": _floats,
    "noise_reps": int,
    "brute_levels": _floats,
    "smooth": lambda t: tuple(int(v) for v in _words(t)),
    "smooth_frame": str.strip,
    "calibration_retries": int,
    "workers": int,
    "long_running": _bool,
}


def parse(text, base: RunConfig | None = None, origin="<config>") -> RunConfig:
    """Apply ``key = value`` lines on top of ``base``."""
    updates, extra = {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARSERS:
            raise ValueError(f"{origin}:{n}: unknown key {key!r}")
        try:
            parsed = PARSERS[key](value)
        except ValueError as exc:
            raise ValueError(f"{origin}:{n}: {key}: {exc}") from exc
        if key == "long_running":
            extra[key] = parsed
        else:
            updates[key] = parsed
    cfg = replace(base or RunConfig(), **updates)
    cfg.extra = {**cfg.extra, **extra}
    return cfg


def load(path, base=None) -> RunConfig:
    return parse(Path(path).read_text(), base, origin=str(path))


def default_config_text(name):
    return resources.files("mrfzoom").joinpath("configs", f"{name}.cfg").read_text()


def default(command) -> RunConfig:
    """Checked-in default configuration for an experiment."""
    return parse(default_config_text(command), RunConfig(command=command),
                 origin=f"configs/{command}.cfg")


def overrides(pairs, base: RunConfig) -> RunConfig:
    """Apply ``key=value`` strings (from ``--set``) to ``base``."""
    return parse("\n".join(pairs), base, origin="--set")
