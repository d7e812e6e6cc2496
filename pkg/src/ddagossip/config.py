"""Experiment configuration: a TOML file plus scalar overrides."""

import re
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .algorithms import StepSizeSchedule
from .network import GossipScheme, GraphError, SchemeKind, broadcast_gossip, fixed_scheme, pairwise_gossip
from .polyhedron import InfeasibleSetError, Polyhedron
from .problem import QuadraticEstimationProblem, facet_tilt, generate_instance

TABLES = ("problem", "polyhedron", "scheme", "schedule", "init", "record", "tolerances", "analysis")
TOP_KEYS = ("seed", "out", "algorithm", "steps", "n_runs", "agent") + TABLES

DEFAULTS = {
    "problem": {"m": 50, "d": 2, "x_star": [1.0, 2.0], "seed": None, "sigma_range": [0.1, 0.5],
                "min_margin": 0.1, "tilt_scale": 0.0, "exact_gradients": False, "R_u": None,
                "sigma_v2": None},
    "polyhedron": {"B": [[-2.0, 1.0]], "b": [0.0], "C": [[1.0, 0.0], [0.0, -1.0]], "c": [5.0, 0.0]},
    "scheme": {"kind": "pairwise", "graph": "complete", "edges": None, "mix": 0.5, "matrix": None},
    "schedule": {"a": 5.0, "alpha_exp": 0.67},
    "init": {"box": [[0.0, 5.0], [0.0, 5.0]], "point": None, "per_agent": False},
    "record": {"dense_until": 2000, "stride": 10},
    "tolerances": {"active": 1e-6, "projection": 1e-10, "max_iter": 500},
    "analysis": {"window_fraction": 0.25, "hist_bins": 40, "delta": 0.2, "n_jobs": 1,
                 "rate_windows": 6, "rate_k_min": 100},
}


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
_ASSIGN = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")


def _key_lines(text):
    """Map (table, key) -> 1-based line of its assignment; table '' is the root."""
    lines = {}
    table = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        h = _HEADER.match(raw)
        if h:
            table = h.group(1)
            lines[(table, None)] = n
            continue
        a = _ASSIGN.match(raw)
        if a:
            lines.setdefault((table, a.group(1)), n)
    return lines


@dataclass(frozen=True)
class Experiment:
    problem: QuadraticEstimationProblem
    polyhedron: Polyhedron
    scheme: GossipScheme
    schedule: StepSizeSchedule


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    steps: int = 2000
    n_runs: int = 1000
    algorithm: str = "dda"
    agent: int = 1
    out: str = "results"
    problem: dict = field(default_factory=lambda: dict(DEFAULTS["problem"]))
    polyhedron: dict = field(default_factory=lambda: dict(DEFAULTS["polyhedron"]))
    scheme: dict = field(default_factory=lambda: dict(DEFAULTS["scheme"]))
    schedule: dict = field(default_factory=lambda: dict(DEFAULTS["schedule"]))
    init: dict = field(default_factory=lambda: dict(DEFAULTS["init"]))
    record: dict = field(default_factory=lambda: dict(DEFAULTS["record"]))
    tolerances: dict = field(default_factory=lambda: dict(DEFAULTS["tolerances"]))
    analysis: dict = field(default_factory=lambda: dict(DEFAULTS["analysis"]))
    source: str = field(default=None, compare=False, repr=False)
    _lines: dict = field(default=None, compare=False, repr=False)

    @classmethod
    def from_dict(cls, data, source=None, lines=None):
        lines = lines or {}

        def fail(msg, table="", key=None):
            raise ConfigError(msg, source, lines.get((table, key), lines.get((table, None))))

        for key in data:
            if key not in TOP_KEYS:
                fail(f"unknown key {key!r}", "", key)
        if "seed" not in data:
            fail("a master seed is required (no wall-clock seeding)")
        kwargs = {}
        for key in ("seed", "steps", "n_runs", "agent"):
            if key in data:
                v = data[key]
                if isinstance(v, bool) or not isinstance(v, int):
                    fail(f"{key} must be an integer", "", key)
                kwargs[key] = v
        for key in ("algorithm", "out"):
            if key in data:
                if not isinstance(data[key], str):
                    fail(f"{key} must be a string", "", key)
                kwargs[key] = data[key]
        for table in TABLES:
            given = data.get(table, {})
            if not isinstance(given, dict):
                fail(f"[{table}] must be a table", "", table)
            for key in given:
                if key not in DEFAULTS[table]:
                    fail(f"unknown key {key!r} in [{table}]", table, key)
            kwargs[table] = {**DEFAULTS[table], **given}
        cfg = cls(source=source, _lines=lines, **kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        text = raw.decode("utf-8")
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"TOML syntax error: {exc}", path, int(m.group(1)) if m else None) from None
        return cls.from_dict(data, source=str(path), lines=_key_lines(text))

    def _fail(self, msg, table="", key=None):
        lines = self._lines or {}
        raise ConfigError(msg, self.source, lines.get((table, key), lines.get((table, None))))

    def with_overrides(self, **overrides):
        """Replace scalar fields (seed, steps, n_runs, agent, out, algorithm) or ``scheme`` kind."""
        changes = {k: v for k, v in overrides.items() if v is not None and k != "scheme"}
        if overrides.get("scheme") is not None:
            changes["scheme"] = {**self.scheme, "kind": overrides["scheme"]}
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self):
        if self.steps < 0:
            self._fail("steps must be nonnegative", "", "steps")
        if self.n_runs < 1:
            self._fail("n_runs must be at least 1", "", "n_runs")
        if self.seed < 0:
            self._fail("seed must be nonnegative", "", "seed")
        if self.algorithm not in ("dda", "dpg"):
            self._fail("algorithm must be 'dda' or 'dpg'", "", "algorithm")
        p = self.problem
        m, d = p["m"], p["d"]
        if not isinstance(m, int) or m < 1:
            self._fail("problem.m must be a positive integer", "problem", "m")
        if not isinstance(d, int) or d < 1:
            self._fail("problem.d must be a positive integer", "problem", "d")
        if not 1 <= self.agent <= m:
            self._fail(f"agent must lie in 1..{m}", "", "agent")
        if np.asarray(p["x_star"], dtype=float).shape != (d,):
            self._fail(f"problem.x_star must have length {d}", "problem", "x_star")
        lo, hi = p["sigma_range"]
        if not 0 <= lo <= hi:
            self._fail("problem.sigma_range must satisfy 0 <= low <= high", "problem", "sigma_range")
        for key, rows_key in (("B", "b"), ("C", "c")):
            M = np.asarray(self.polyhedron[key], dtype=float)
            rhs = np.asarray(self.polyhedron[rows_key], dtype=float).reshape(-1)
            if M.size and (M.ndim != 2 or M.shape[1] != d):
                self._fail(f"polyhedron.{key} must have {d} columns", "polyhedron", key)
            if (M.shape[0] if M.size else 0) != rhs.size:
                self._fail(f"polyhedron.{rows_key} must have one entry per row of {key}", "polyhedron", rows_key)
        try:
            SchemeKind(self.scheme["kind"])
        except ValueError:
            self._fail(f"unknown scheme kind {self.scheme['kind']!r}", "scheme", "kind")
        if self.schedule["a"] <= 0:
            self._fail("schedule.a must be positive", "schedule", "a")
        init = self.init
        if init["point"] is not None:
            if np.asarray(init["point"], dtype=float).shape != (d,):
                self._fail(f"init.point must have length {d}", "init", "point")
        elif np.asarray(init["box"], dtype=float).shape != (d, 2):
            self._fail(f"init.box must be {d} pairs [low, high]", "init", "box")
        wf = self.analysis["window_fraction"]
        if not 0 < wf <= 1:
            self._fail("analysis.window_fraction must lie in (0, 1]", "analysis", "window_fraction")
        if self.record["dense_until"] < 0 or self.record["stride"] < 1:
            self._fail("record.dense_until must be >= 0 and record.stride >= 1", "record", "stride")

    # seeds ---------------------------------------------------------------

    def problem_seed(self):
        if self.problem["seed"] is not None:
            return np.random.SeedSequence(self.problem["seed"])
        return np.random.SeedSequence(self.seed, spawn_key=(0,))

    def run_seed(self, run):
        """Seed of replication ``run``; ``run`` subcommand uses replication 0."""
        return np.random.SeedSequence(self.seed, spawn_key=(1, int(run)))

    # builders ------------------------------------------------------------

    def build_polyhedron(self):
        pol = self.polyhedron
        tol = self.tolerances
        try:
            return Polyhedron(pol["B"], pol["b"], pol["C"], pol["c"], d=self.problem["d"],
                              tol=tol["projection"], max_iter=tol["max_iter"])
        except InfeasibleSetError as exc:
            self._fail(str(exc), "polyhedron")

    def build_problem(self):
        p = self.problem
        B = np.asarray(self.polyhedron["B"], dtype=float).reshape(-1, p["d"])
        tilt = facet_tilt(B, p["tilt_scale"]) if p["tilt_scale"] else None
        if p["R_u"] is not None:
            sig = p["sigma_v2"] if p["sigma_v2"] is not None else np.mean(p["sigma_range"])
            prob = QuadraticEstimationProblem(p["x_star"], p["R_u"], sig, tilt=tilt)
            if prob.m != p["m"]:
                self._fail(f"problem.R_u holds {prob.m} matrices but m = {p['m']}", "problem", "R_u")
        else:
            rng = np.random.default_rng(self.problem_seed())
            prob = generate_instance(p["m"], p["d"], np.asarray(p["x_star"], dtype=float), rng,
                                     sigma_range=tuple(p["sigma_range"]), B=B if B.size else None,
                                     min_margin=p["min_margin"], tilt=tilt)
            if p["sigma_v2"] is not None:
                prob = replace(prob, sigma_v2=p["sigma_v2"])
        if p["exact_gradients"]:
            prob = replace(prob, exact_gradients=True)
        return prob

    def build_scheme(self):
        s = self.scheme
        m = self.problem["m"]
        kind = SchemeKind(s["kind"])
        if kind is SchemeKind.FIXED:
            if s["matrix"] is None:
                self._fail("scheme.matrix is required for kind = 'fixed'", "scheme", "kind")
            return fixed_scheme(s["matrix"])
        graph = s["edges"] if s["edges"] is not None else (
            f"complete:{m}" if s["graph"] == "complete" else s["graph"])
        try:
            if kind is SchemeKind.PAIRWISE:
                return pairwise_gossip(m, graph)
            return broadcast_gossip(m, graph, mix=s["mix"])
        except GraphError as exc:
            self._fail(str(exc), "scheme", "edges" if s["edges"] is not None else "graph")

    def build_schedule(self):
        return StepSizeSchedule(float(self.schedule["a"]), float(self.schedule["alpha_exp"]))

    def build(self):
        return Experiment(self.build_problem(), self.build_polyhedron(), self.build_scheme(),
                          self.build_schedule())

    @property
    def init_spec(self):
        if self.init["point"] is not None:
            return np.asarray(self.init["point"], dtype=float)
        return np.asarray(self.init["box"], dtype=float)

    def record_steps(self):
        from .algorithms import record_steps

        return record_steps(self.steps, self.record["dense_until"], self.record["stride"])

    def to_dict(self):
        out = asdict(self)
        out.pop("source")
        out.pop("_lines")
        return out


def estimation_config(seed=0, **overrides):
    """The parameter-estimation setup: triangle, x* = (1, 2), alpha_k = 5/k^0.67, init in [0, 5]^2."""
    cfg = ExperimentConfig(seed=seed)
    tables = {k: v for k, v in overrides.items() if k in TABLES}
    scalars = {k: v for k, v in overrides.items() if k not in TABLES}
    cfg = replace(cfg, **{k: {**getattr(cfg, k), **v} for k, v in tables.items()}, **scalars)
    cfg.validate()
    return cfg
