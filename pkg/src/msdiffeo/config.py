"""Run configuration: ``key = value`` lines with dotted sections.

Grammar::

    # comment
    section.key = value

Blank lines and ``#`` comments are ignored. Every key must be known;
``kernel.component = sigma,weight`` may repeat (coarse to fine), every other
key may appear once. Relative paths are taken from the config file's folder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .flows import TimeIntegrator
from .kernels import CONTINUUM, FINITE, GaussianKernel, KernelSpec
from .registration.optimize import OptimizerConfig
from .registration.problem import FORMULATIONS, SUM_OF_KERNELS

COMMANDS = ("register", "decompose", "verify", "oracle")


class ConfigError(ValueError):
    pass


def _int(s):
    return int(s, 0) if isinstance(s, str) else int(s)


def _choice(*options):
    def conv(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return conv


def _component(s):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'sigma,weight'")
    return (float(parts[0]), float(parts[1]))


# key -> (converter, default); None default means "unset"
SCHEMA = {
    "command": (_choice(*COMMANDS), None),
    "seed": (_int, 0),
    "formulation": (_choice(*FORMULATIONS), SUM_OF_KERNELS),
    "paths.source": (str, None),
    "paths.target": (str, None),
    "paths.control": (str, None),
    "paths.output": (str, None),
    "data.sigma2": (float, None),
    "grid.size": (_int, 32),
    "kernel.mode": (_choice(FINITE, CONTINUUM), FINITE),
    "kernel.smin": (float, None),
    "kernel.smax": (float, None),
    "kernel.nodes": (_int, None),
    "kernel.sigma_min": (float, None),
    "kernel.sigma_max": (float, None),
    "kernel.bins": (_int, 4),
    "time.steps": (_int, 10),
    "time.scheme": (_choice("rk4", "euler"), "rk4"),
    "time.substeps": (_int, 1),
    "optimizer.max_iters": (_int, 200),
    "optimizer.step_init": (float, 1.0),
    "optimizer.backtrack": (float, 0.5),
    "optimizer.armijo": (float, 1e-4),
    "optimizer.grad_tol": (float, 1e-8),
    "optimizer.rel_tol": (float, 1e-12),
    "optimizer.memory": (_int, 10),
    "decompose.convention": (_choice("right", "left"), "right"),
    "verify.tighten": (float, 1.0),
    "oracle.tuples": (_int, 1000),
}
REPEATED = "kernel.component"


@dataclass
class RunConfig:
    settings: dict = field(default_factory=dict)
    components: list = field(default_factory=list)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        full = {k: d for k, (_, d) in SCHEMA.items()}
        for k, v in self.settings.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            full[k] = v
        self.settings = full
        self.components = [tuple(map(float, c)) for c in self.components]

    def __getitem__(self, key):
        return self.settings[key]

    def with_values(self, **kv) -> "RunConfig":
        s = dict(self.settings)
        for k, v in kv.items():
            s[k.replace("__", ".")] = v
        return RunConfig(s, list(self.components), self.base_dir)

    @property
    def seed(self):
        return self.settings["seed"]

    @property
    def command(self):
        return self.settings["command"]

    def path(self, key):
        """Absolute path for a ``paths.*`` key, or None when unset."""
        v = self.settings[f"paths.{key}"]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def kernel_spec(self) -> KernelSpec:
        s = self.settings
        try:
            if s["kernel.mode"] == FINITE:
                if not self.components:
                    raise ConfigError("finite kernel needs at least one kernel.component line")
                return KernelSpec.finite([GaussianKernel(sig, w) for sig, w in self.components])
            if self.components:
                raise ConfigError("kernel.component lines are for finite kernels")
            need = ("kernel.smin", "kernel.smax", "kernel.nodes", "kernel.sigma_min", "kernel.sigma_max")
            missing = [k for k in need if s[k] is None]
            if missing:
                raise ConfigError(f"continuum kernel needs {', '.join(missing)}")
            return KernelSpec.continuum(s["kernel.smin"], s["kernel.smax"], s["kernel.nodes"],
                                        s["kernel.sigma_min"], s["kernel.sigma_max"])
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"invalid kernel: {e}") from e

    def integrator(self) -> TimeIntegrator:
        try:
            return TimeIntegrator(self.settings["time.scheme"], self.settings["time.substeps"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def optimizer(self) -> OptimizerConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.settings.items() if k.startswith("optimizer.")}
        try:
            return OptimizerConfig(**kw)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def serialize(self) -> str:
        lines = []
        for k in SCHEMA:
            v = self.settings[k]
            if v is None:
                continue
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
            if k == "kernel.mode":
                lines.extend(f"{REPEATED} = {sig!r},{w!r}" for sig, w in self.components)
        return "\n".join(lines) + "\n"


def parse_config(text, base_dir=".") -> RunConfig:
    settings, components = {}, []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            if key == REPEATED:
                components.append(_component(value))
                continue
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            if key in settings:
                raise ConfigError(f"key {key!r} given twice")
            settings[key] = SCHEMA[key][0](value)
        except ConfigError as e:
            raise ConfigError(f"line {n}: {e}") from None
        except ValueError as e:
            raise ConfigError(f"line {n}: bad value for {key}: {e}") from None
    return RunConfig(settings, components, Path(base_dir))


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, p.parent)
