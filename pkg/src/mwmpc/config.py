"""Experiment configuration files (YAML) and their validation.

Schema (all keys optional unless marked)::

    seed: 7                         # required
    system:
      name: scalar_affine           # required; builtin system name
      params: {}                    # factory keyword arguments
    horizon: 3                      # default: the system's documented horizon
    exponent: auto                  # integer, or "auto" for the constructive minimum
    m_range: [0, 10]                # inclusive bounds for sweep-m
    initial_states: [[1.0]]         # default: the system's documented feasible state
    steps: 50
    stop_level: 1.0e-10
    warm_start: true
    workers: 1
    output_dir: out
    tag: run
    solver: {max_iterations, gradient_tolerance, step_init, num_starts, fd_epsilon}
    certificates:
      clf: true
      clf_samples: 10000
      gamma: null                   # default: system metadata
      rho_bar: null
      eta_state_samples: 200
      eta_profile_samples: 200
      lemma1_m: [1, 10]             # inclusive bounds
      reachability_tolerance: 1.0e-8
    oracle:
      horizon: 3
      exponents: [0, 1, 2]
      levels: [-1.0, -0.5, 0.0, 0.5, 1.0]
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .dynamics import BUILTIN_SYSTEMS, ModelError, SystemModel, builtin_system
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CertificateSettings:
    clf: bool = True
    clf_samples: int = 10_000
    gamma: Optional[float] = None
    rho_bar: Optional[float] = None
    eta_state_samples: int = 200
    eta_profile_samples: int = 200
    lemma1_m: tuple[int, int] = (1, 10)
    reachability_tolerance: float = 1e-8


@dataclass(frozen=True)
class OracleSettings:
    horizon: int = 3
    exponents: tuple[int, ...] = (0, 1, 2)
    levels: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    system: str
    system_params: dict = field(default_factory=dict)
    horizon: Optional[int] = None
    exponent: Union[int, str] = "auto"
    m_range: tuple[int, int] = (0, 10)
    initial_states: Optional[tuple[tuple[float, ...], ...]] = None
    steps: int = 50
    stop_level: float = 1e-10
    warm_start: bool = True
    workers: int = 1
    output_dir: str = "out"
    tag: str = "run"
    solver: SolverConfig = SolverConfig()
    certificates: CertificateSettings = CertificateSettings()
    oracle: OracleSettings = OracleSettings()

    def build_model(self) -> SystemModel:
        return builtin_system(self.system, **self.system_params)

    def resolved_horizon(self, model: SystemModel) -> int:
        return self.horizon if self.horizon is not None else int(model.metadata["horizon"])

    def resolved_initial_states(self, model: SystemModel) -> list[list[float]]:
        if self.initial_states is not None:
            return [list(x) for x in self.initial_states]
        return [list(model.metadata["feasible_x0"])]

    def echo(self) -> dict:
        """Plain-data copy of the configuration for embedding in reports.

        ``output_dir`` is left out so that a report does not depend on where
        it was written.
        """
        data = asdict(self)
        del data["output_dir"]
        return _plain(data)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# parsing

def _key_lines(node, prefix="", out=None) -> dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict[str, int], source: str):
        self.data, self.lines, self.source = data, lines, source

    def fail(self, path: str, message: str):
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {path}: {message}")

    def section(self, path: str) -> dict:
        value = self.get(path, {})
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        return value

    def get(self, path: str, default=None):
        cur: Any = self.data
        for part in path.split("."):
            if not isinstance(cur, dict) or part not in cur:
                return default
            cur = cur[part]
        return cur

    def integer(self, path, default=None, minimum=None):
        v = self.get(path, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(path, f"must be >= {minimum}, got {v}")
        return v

    def number(self, path, default=None, positive=False, nonnegative=False):
        v = self.get(path, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if positive and not v > 0:
            self.fail(path, f"must be positive, got {v}")
        if nonnegative and v < 0:
            self.fail(path, f"must be nonnegative, got {v}")
        return float(v)

    def boolean(self, path, default):
        v = self.get(path, default)
        if not isinstance(v, bool):
            self.fail(path, f"expected true/false, got {v!r}")
        return v

    def int_range(self, path, default):
        v = self.get(path, list(default))
        if (not isinstance(v, list) or len(v) != 2
                or any(isinstance(x, bool) or not isinstance(x, int) for x in v)):
            self.fail(path, f"expected [low, high] integers, got {v!r}")
        if v[0] < 0 or v[1] < v[0]:
            self.fail(path, f"range must satisfy 0 <= low <= high, got {v!r}")
        return (v[0], v[1])

    def check_keys(self, path: str, allowed: set[str]):
        section = self.data if not path else self.section(path)
        for key in section:
            if key not in allowed:
                full = f"{path}.{key}" if path else str(key)
                self.fail(full, f"unknown key (allowed: {', '.join(sorted(allowed))})")


_TOP = {"seed", "system", "horizon", "exponent", "m_range", "initial_states", "steps",
        "stop_level", "warm_start", "workers", "output_dir", "tag", "solver",
        "certificates", "oracle"}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: malformed YAML: {exc.problem}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    r = _Reader(data, _key_lines(node) if node is not None else {}, source)
    r.check_keys("", _TOP)

    if "seed" not in data:
        r.fail("seed", "missing; seeds are mandatory")
    seed = r.integer("seed")

    system = r.section("system")
    r.check_keys("system", {"name", "params"})
    name = system.get("name")
    if name not in BUILTIN_SYSTEMS:
        r.fail("system.name", f"unknown system {name!r}; valid: {', '.join(sorted(BUILTIN_SYSTEMS))}")
    params = r.section("system.params")

    horizon = r.integer("horizon", None, minimum=2)
    exponent = data.get("exponent", "auto")
    if exponent != "auto":
        exponent = r.integer("exponent", minimum=0)

    states = data.get("initial_states")
    if states is not None:
        if not isinstance(states, list) or not states:
            r.fail("initial_states", "expected a nonempty list of state vectors")
        parsed = []
        for i, s in enumerate(states):
            s = [s] if isinstance(s, (int, float)) and not isinstance(s, bool) else s
            if (not isinstance(s, list) or not s
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in s)):
                r.fail("initial_states", f"entry {i} is not a numeric vector: {s!r}")
            parsed.append(tuple(float(v) for v in s))
        states = tuple(parsed)

    r.check_keys("solver", {f for f in SolverConfig.__dataclass_fields__ if f != "seed"})
    d = SolverConfig()
    solver = SolverConfig(
        max_iterations=r.integer("solver.max_iterations", d.max_iterations, minimum=0),
        gradient_tolerance=r.number("solver.gradient_tolerance", d.gradient_tolerance, positive=True),
        step_init=r.number("solver.step_init", d.step_init, positive=True),
        num_starts=r.integer("solver.num_starts", d.num_starts, minimum=1),
        fd_epsilon=r.number("solver.fd_epsilon", d.fd_epsilon, positive=True),
        seed=seed)

    r.check_keys("certificates", set(CertificateSettings.__dataclass_fields__))
    cd = CertificateSettings()
    certs = CertificateSettings(
        clf=r.boolean("certificates.clf", cd.clf),
        clf_samples=r.integer("certificates.clf_samples", cd.clf_samples, minimum=0),
        gamma=r.number("certificates.gamma", None, positive=True),
        rho_bar=r.number("certificates.rho_bar", None, positive=True),
        eta_state_samples=r.integer("certificates.eta_state_samples", cd.eta_state_samples, minimum=0),
        eta_profile_samples=r.integer("certificates.eta_profile_samples", cd.eta_profile_samples, minimum=0),
        lemma1_m=r.int_range("certificates.lemma1_m", cd.lemma1_m),
        reachability_tolerance=r.number("certificates.reachability_tolerance",
                                        cd.reachability_tolerance, positive=True))

    r.check_keys("oracle", set(OracleSettings.__dataclass_fields__))
    od = OracleSettings()
    exps = r.get("oracle.exponents", list(od.exponents))
    if (not isinstance(exps, list) or not exps
            or any(isinstance(e, bool) or not isinstance(e, int) or e < 0 for e in exps)):
        r.fail("oracle.exponents", f"expected a nonempty list of nonnegative integers, got {exps!r}")
    levels = r.get("oracle.levels", list(od.levels))
    if (not isinstance(levels, list) or not levels
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in levels)):
        r.fail("oracle.levels", f"expected a nonempty list of numbers, got {levels!r}")
    oracle = OracleSettings(horizon=r.integer("oracle.horizon", od.horizon, minimum=2),
                            exponents=tuple(exps), levels=tuple(float(v) for v in levels))

    tag = data.get("tag", "run")
    if not isinstance(tag, str) or not tag or any(c in tag for c in "/\\"):
        r.fail("tag", f"expected a plain file-name fragment, got {tag!r}")
    out_dir = data.get("output_dir", "out")
    if not isinstance(out_dir, str):
        r.fail("output_dir", f"expected a path string, got {out_dir!r}")

    cfg = ExperimentConfig(
        seed=seed, system=name, system_params=dict(params), horizon=horizon,
        exponent=exponent, m_range=r.int_range("m_range", (0, 10)),
        initial_states=states, steps=r.integer("steps", 50, minimum=1),
        stop_level=r.number("stop_level", 1e-10, nonnegative=True),
        warm_start=r.boolean("warm_start", True), workers=r.integer("workers", 1, minimum=1),
        output_dir=out_dir, tag=tag, solver=solver, certificates=certs, oracle=oracle)

    try:
        model = cfg.build_model()
    except (TypeError, ModelError, ValueError) as exc:
        r.fail("system.params", f"cannot build {name!r}: {exc}")
    for i, x in enumerate(cfg.resolved_initial_states(model)):
        if len(x) != model.state_dim:
            r.fail("initial_states", f"entry {i} has dimension {len(x)}, "
                                     f"{name} has state dimension {model.state_dim}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                   output_dir: Optional[str] = None) -> ExperimentConfig:
    from dataclasses import replace
    if seed is not None:
        cfg = replace(cfg, seed=seed, solver=replace(cfg.solver, seed=seed))
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    return cfg
