"""JSON experiment configuration with strict field checking."""
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields

from llns.integrator import ForcingSpec


class ConfigError(ValueError):
    pass


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = [f.name for f in fields(cls)
               if f.name not in data and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        raise ConfigError(f"{where}: missing field(s) {', '.join(missing)}")
    return cls(**data)


@dataclass(frozen=True)
class InitialMeasureSpec:
    """``kind`` is 'dirac' (named ``field`` or a snapshot ``path``) or 'synthetic_besov'."""

    kind: str = "dirac"
    field: str = "taylor_green"
    path: str = None
    sigma: float = 1.0 / 3.0
    p: float = 2.0
    seed: int = 0
    energy: float = 0.25

    def __post_init__(self):
        if self.kind not in ("dirac", "synthetic_besov"):
            raise ConfigError(f"initial.kind must be dirac or synthetic_besov, got {self.kind!r}")
        if self.kind == "dirac" and self.field not in ("taylor_green", "zero", "file"):
            raise ConfigError(f"initial.field must be taylor_green, zero or file, got {self.field!r}")
        if self.kind == "dirac" and self.field == "file" and not self.path:
            raise ConfigError("initial.path is required for field 'file'")
        if self.energy < 0:
            raise ConfigError("initial.energy must be nonnegative")


@dataclass(frozen=True)
class ForcingConfig:
    modes: list = field(default_factory=list)
    profile: str = "constant"
    omega: float = 0.0

    def to_spec(self):
        modes = []
        for i, mode in enumerate(self.modes):
            if not isinstance(mode, dict) or set(mode) != {"k", "amplitude"}:
                raise ConfigError(f"forcing.modes[{i}] needs exactly the fields k and amplitude")
            amp = tuple(complex(re, im) for re, im in mode["amplitude"])
            modes.append((tuple(int(v) for v in mode["k"]), amp))
        try:
            return ForcingSpec(tuple(modes), self.profile, self.omega)
        except ValueError as exc:
            raise ConfigError(f"forcing: {exc}") from exc


@dataclass(frozen=True)
class ShellConfig:
    N: int = 24
    lam: float = 2.0
    k0: float = 1.0
    forcing: list = field(default_factory=lambda: [[0.5, 0.5]])
    dt_factor: float = 0.1
    dt_max: float = 2e-3
    initial_shells: int = 3
    observables: list = field(default_factory=lambda: ["re:1"])
    t_sample: float = None

    def force_tuple(self):
        return tuple(complex(re, im) for re, im in self.forcing)

    def dt_for(self, nu):
        """dt = min(dt_max, dt_factor sqrt(nu)), a fixed fraction of the Kolmogorov time."""
        return min(self.dt_max, self.dt_factor * math.sqrt(nu))


@dataclass(frozen=True)
class DiagnoseConfig:
    sigma: float = 1.0 / 3.0
    p: float = 2.0
    r: float = 2.0
    orders: list = field(default_factory=lambda: [2, 4, 6])


@dataclass(frozen=True)
class ResidualConfig:
    kmax: int = 1
    t: float = None
    sigma: float = 1.0 / 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; mirrors the solver, shell, initial-data and sweep parameters."""

    experiment_id: str
    model: str = "pde"
    d: int = 2
    n: int = None
    alpha: float = 0.75
    nus: list = field(default_factory=lambda: [0.01])
    dt: float = 1e-3
    t_end: float = 1.0
    theta: float = math.sqrt(2.0)
    noise: bool = True
    nonlinear: bool = True
    members: int = 1
    seed: int = 0
    sample_every: int = 10
    workers: int = 1
    observables: list = field(default_factory=lambda: ["energy", "corridor_energies"])
    initial: InitialMeasureSpec = field(default_factory=InitialMeasureSpec)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    shell: ShellConfig = field(default_factory=ShellConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)
    residual: ResidualConfig = field(default_factory=ResidualConfig)

    def __post_init__(self):
        if self.model not in ("pde", "shell"):
            raise ConfigError(f"model must be pde or shell, got {self.model!r}")
        if not self.nus or any(not nu > 0 for nu in self.nus):
            raise ConfigError("nus must be a nonempty list of positive viscosities")
        if self.members < 1 or self.sample_every < 1 or self.workers < 1:
            raise ConfigError("members, sample_every and workers must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def canonical(self):
        """The config as plain data, excluding execution-only fields."""
        data = asdict(self)
        data.pop("workers")
        return data

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


_SECTIONS = {
    "initial": InitialMeasureSpec, "forcing": ForcingConfig, "shell": ShellConfig,
    "diagnose": DiagnoseConfig, "residual": ResidualConfig,
}


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    for key, cls in _SECTIONS.items():
        if key in data:
            data[key] = _from_dict(cls, data[key], key)
    cfg = _from_dict(ExperimentConfig, data, "config")
    cfg.forcing.to_spec()
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
