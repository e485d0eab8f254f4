"""Experiment harness: ``opl <suite> --config <path> [--seed N] [--out DIR] [--threads K]``.

Every run directory holds the exact config used (config.json), the report
(report.json plus report.sha256), CSV series, and a metadata.json that is the
only file carrying timestamps.  Exit codes: 0 all checks pass, 1 a check
failed, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUITES = ("init-check", "stability", "ntk", "train-gd", "train-sgd", "landscape", "arch-cnn", "arch-resnet")
DEFAULT_OUT = "opl-runs"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _logspace(lo, hi, k):
    return [10 ** (lo + (hi - lo) * i / (k - 1)) for i in range(k)]


@dataclass
class ArchBlock:
    input_dim: int = 10
    width: int = 2000
    depth: int = 3
    output_dim: int = 1


@dataclass
class DataBlock:
    n: int = 10
    delta: float = 0.1
    label_mode: str = "regression"
    seed: int | None = None  # None: use the global seed


@dataclass
class TrainBlock:
    T: int = 3000
    eps: float = 1e-3
    eta: float | None = None  # None: pick by eta sweep
    eta_grid: list = field(default_factory=lambda: [1e-2 * 2 ** (-k / 2) for k in range(16)])
    pilot: int = 50
    sgd_batch: int = 2
    travel_spec_every: int = 10
    travel_max: float = 0.1
    gd_r2_min: float = 0.95
    sgd_r2_min: float = 0.9
    ce_n: int = 12
    ce_classes: int = 3
    ce_width: int = 1024


@dataclass
class InitBlock:
    width: int = 2048
    depth: int = 8
    n: int = 5
    eps: float = 0.15
    max_frac: float = 0.01
    seeds: int = 50  # forward norms are pooled over this many independent networks


@dataclass
class StabilityBlock:
    width: int = 4096
    depth: int = 6
    n: int = 5
    omegas: list = field(default_factory=lambda: _logspace(-4, -1, 10))
    mode: str = "targeted"


@dataclass
class NtkBlock:
    width: int = 4096
    depth: int = 5
    omegas: list = field(default_factory=lambda: _logspace(-4, -2, 9))
    width_sweep: list = field(default_factory=lambda: [512, 2048, 8192])
    sweep_depth: int = 4
    sweep_n: int = 8
    sweep_T: int = 30


@dataclass
class LandscapeBlock:
    semi_width: int = 512
    semi_depth: int = 3
    semi_n: int = 16
    omega1_scale: float = 1.0  # omega1 = scale / sqrt(m)
    omega2s: list = field(default_factory=lambda: _logspace(-4, -1, 13))
    trend_widths: list = field(default_factory=lambda: [256, 512, 1024])
    oja_width: int = 64
    oja_depth: int = 2
    oja_steps: int = 300
    grid_extent: list = field(default_factory=lambda: [0.5, 0.5])
    grid_steps: list = field(default_factory=lambda: [11, 11])


@dataclass
class CnnBlock:
    positions: int = 8
    q: int = 3
    channels: int = 512
    depth: int = 8
    train_depth: int = 3
    topology: str = "circulant"


@dataclass
class ResnetBlock:
    width: int = 2048
    depth: int = 20
    train_width: int = 2000
    cap: float = 4.0


BLOCKS = {
    "arch": ArchBlock,
    "dataset": DataBlock,
    "training": TrainBlock,
    "init_check": InitBlock,
    "stability": StabilityBlock,
    "ntk": NtkBlock,
    "landscape": LandscapeBlock,
    "cnn": CnnBlock,
    "resnet": ResnetBlock,
}


@dataclass
class ExperimentConfig:
    suite: str = "all"
    seed: int = 0
    out: str | None = None
    arch: ArchBlock = field(default_factory=ArchBlock)
    dataset: DataBlock = field(default_factory=DataBlock)
    training: TrainBlock = field(default_factory=TrainBlock)
    init_check: InitBlock = field(default_factory=InitBlock)
    stability: StabilityBlock = field(default_factory=StabilityBlock)
    ntk: NtkBlock = field(default_factory=NtkBlock)
    landscape: LandscapeBlock = field(default_factory=LandscapeBlock)
    cnn: CnnBlock = field(default_factory=CnnBlock)
    resnet: ResnetBlock = field(default_factory=ResnetBlock)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            if key in BLOCKS:
                kw[key] = _block(BLOCKS[key], value, key)
            else:
                kw[key] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e

    def canonical(self) -> str:
        """Canonical JSON of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("out", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def data_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def validate(self) -> None:
        if self.suite not in SUITES + ("all",):
            raise ConfigError(f"unknown suite {self.suite!r}; expected one of {', '.join(SUITES + ('all',))}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        a = self.arch
        if a.width < 1 or a.depth < 1 or a.output_dim < 1 or a.input_dim < 2:
            raise ConfigError("arch: width, depth, output_dim >= 1 and input_dim >= 2 required")
        ds = self.dataset
        if ds.n < 1 or not (0 < ds.delta <= math.sqrt(2)):
            raise ConfigError("dataset: n >= 1 and 0 < delta <= sqrt(2) required")
        if ds.label_mode not in ("regression", "classification"):
            raise ConfigError(f"dataset: unknown label_mode {ds.label_mode!r}")
        t = self.training
        if t.eps <= 0 or t.T < 0 or (t.eta is not None and t.eta <= 0) or not t.eta_grid:
            raise ConfigError("training: eps > 0, T >= 0, eta > 0 and a non-empty eta_grid required")
        if not 1 <= t.sgd_batch <= ds.n:
            raise ConfigError("training: sgd_batch must be in [1, n]")
        for name in ("omegas",):
            if any(w < 0 for w in getattr(self.stability, name)) or any(w < 0 for w in getattr(self.ntk, name)):
                raise ConfigError("omega sweeps must be non-negative")
        g = self.landscape.grid_steps
        if len(g) != 2 or min(g) < 1 or len(self.landscape.grid_extent) != 2:
            raise ConfigError("landscape: grid_steps and grid_extent need two entries")
        if self.cnn.q > self.cnn.positions:
            raise ConfigError("cnn: q must not exceed the number of positions")

    def warnings(self) -> list:
        out = []
        if self.dataset.delta * self.arch.depth > 1:
            out.append(f"delta * L = {self.dataset.delta * self.arch.depth:.3g} > 1: the analysis assumes delta <= O(1/L)")
        return out


def _block(cls, value, key):
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
    try:
        return cls(**value)
    except TypeError as e:
        raise ConfigError(f"{key}: {e}") from e


# ---------------------------------------------------------------- report


@dataclass
class ExperimentReport:
    suite: str
    config_hash: str
    probes: dict = field(default_factory=dict)  # name -> ProbeReport
    groups: dict = field(default_factory=dict)  # probe name -> result group
    traces: dict = field(default_factory=dict)  # name -> ConvergenceTrace
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    grids: dict = field(default_factory=dict)  # name -> LandscapeGrid
    warnings: list = field(default_factory=list)

    def add(self, group: str, report) -> None:
        if report.name in self.probes:
            raise ValueError(f"duplicate probe name {report.name}")
        self.probes[report.name] = report
        self.groups[report.name] = group

    @property
    def summary(self) -> dict:
        table = {}
        for name, rep in self.probes.items():
            key = self.groups[name]
            table[key] = table.get(key, True) and bool(rep.passed)
        return dict(sorted(table.items()))

    @property
    def passed(self) -> bool:
        return all(self.summary.values())

    @property
    def empty(self) -> bool:
        return not (self.probes or self.traces or self.tables or self.grids)

    def to_dict(self) -> dict:
        from .reports import _plain

        traces = {}
        for name, tr in self.traces.items():
            traces[name] = _plain(
                {
                    "summary": tr.summary(),
                    "t": tr.t,
                    "F": tr.F,
                    "grad_fro_max": tr.grad_fro_max,
                    "travel_fro_max": tr.travel_fro_max,
                    "travel_spec_max": tr.travel_spec_max,
                    "accuracy": tr.accuracy,
                }
            )
        return {
            "suite": self.suite,
            "config_hash": self.config_hash,
            "probes": {k: v.to_dict() for k, v in sorted(self.probes.items())},
            "groups": dict(sorted(self.groups.items())),
            "traces": dict(sorted(traces.items())),
            "tables": {k: {"header": h, "rows": _plain(r)} for k, (h, r) in sorted(self.tables.items())},
            "grids": {k: {"center": g.center_id, "shape": list(g.F.shape), "F": _plain(g.F)} for k, g in sorted(self.grids.items())},
            "summary": self.summary,
            "warnings": list(self.warnings),
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @staticmethod
    def summary_from_file(path) -> dict:
        """Recompute the pass/fail table from a stored report.json."""
        from .reports import ProbeReport

        d = json.loads(Path(path).read_text())
        table = {}
        for name, pd in d["probes"].items():
            key = d["groups"][name]
            table[key] = table.get(key, True) and ProbeReport.from_dict(pd).passed
        return dict(sorted(table.items()))


# ---------------------------------------------------------------- suites


def _fc(cfg, width, depth, n=None, *, seed=None, data_seed=None, input_dim=None, output_dim=None, label_mode=None):
    from .datagen import generate_separated_dataset
    from .netcore import ArchSpec, init_network

    input_dim = input_dim or cfg.arch.input_dim
    output_dim = output_dim or cfg.arch.output_dim
    seed = cfg.seed if seed is None else seed
    data = generate_separated_dataset(
        n or cfg.dataset.n,
        input_dim,
        cfg.dataset.delta,
        label_mode or cfg.dataset.label_mode,
        cfg.data_seed if data_seed is None else data_seed,
        output_dim=output_dim,
    )
    return init_network(ArchSpec(input_dim, width, output_dim, depth), seed), data


def _check_report(name, values: dict, rules: list, predicted=""):
    from .reports import ProbeReport

    return ProbeReport(name, {k: [v] for k, v in values.items()}, {"kind": "all", "rules": rules}, predicted=predicted)


def suite_init_check(cfg, rep):
    from .theoryprobes import probe_backward_norm, probe_forward_norms_pooled, probe_intermediate_spectral, probe_separateness

    b = cfg.init_check
    draws = (_fc(cfg, b.width, b.depth, b.n, seed=cfg.seed + k, data_seed=cfg.data_seed + k) for k in range(b.seeds))
    rep.add("forward_norm_concentration", probe_forward_norms_pooled(draws, eps=b.eps, max_frac=b.max_frac))
    params, data = _fc(cfg, b.width, b.depth, b.n)
    rep.add("intermediate_spectral_norm", probe_intermediate_spectral(params, data))
    rep.add("backward_norm", probe_backward_norm(params, data, seed=cfg.seed))
    rep.add("separateness", probe_separateness(params, data, delta=cfg.dataset.delta))


def suite_stability(cfg, rep):
    from .theoryprobes import stability_sweep

    b = cfg.stability
    params, data = _fc(cfg, b.width, b.depth, b.n)
    for name, r in stability_sweep(params, data, b.omegas, b.mode, seed=cfg.seed).items():
        rep.add("perturbation_stability", r)


def suite_ntk(cfg, rep):
    from .experiments import width_sweep
    from .ntk import EQUIV_HEADER, gram, ntk_equivalence

    b = cfg.ntk
    params, data = _fc(cfg, b.width, b.depth, 2)
    sweep = ntk_equivalence(params, b.omegas, data.X[0], data.X[1], seed=cfg.seed)
    rep.add("ntk_equivalence", sweep.residual)
    rep.add("ntk_equivalence", sweep.grad_ratio)
    rep.tables["equivalence"] = (EQUIV_HEADER, [p.row() for p in sweep.points])
    K = gram(params, data.X, 0)
    rep.tables["gram"] = (["row", "col", "j", "value"], [[i, k, 0, float(K[i, k])] for i in range(K.shape[0]) for k in range(K.shape[1])])
    del params
    ws = width_sweep(b.width_sweep, depth=b.sweep_depth, n=b.sweep_n, T=b.sweep_T, seed=cfg.seed, delta=cfg.dataset.delta)
    rep.add("ntk_equivalence", ws.reports["ntk_deviation_width"])
    rep.add("no_critical_point", ws.reports["gradient_bounds"])
    rep.tables["width_sweep"] = (
        ["m", "eta", "F0", "F_final", "travel_spec", "deviation_ratio", "r_low_floor", "r_up_cap"],
        [[p.m, p.eta, p.F0, p.F_final, p.travel_spec, p.deviation_ratio, p.r_low_floor, p.r_up_cap] for p in ws.points],
    )


def _pick_eta(cfg, params, data, loss=None):
    from .training import eta_sweep

    if cfg.training.eta is not None:
        return cfg.training.eta
    return eta_sweep(params, data, loss, cfg.training.eta_grid, pilot=cfg.training.pilot).eta


def _convergence_report(name, trace, eps, r2_min, travel_max=None):
    s = trace.summary()
    values = {"F_final": s["F_final"], "log_r2": s["log_r2"] if s["iterations"] >= 2 else 1.0}
    rules = [{"kind": "max_le", "key": "F_final", "hi": eps}, {"kind": "min_ge", "key": "log_r2", "lo": r2_min}]
    if travel_max is not None:
        values["travel_rel_max"] = s["travel_rel_max"]
        rules.append({"kind": "max_le", "key": "travel_rel_max", "hi": travel_max})
    return _check_report(name, values, rules, predicted="linear convergence")


def _train_gd(cfg, rep, params, data, tag, group):
    from .training import TrainConfig, train

    t = cfg.training
    eta = _pick_eta(cfg, params, data)
    tr = train(params, data, None, TrainConfig(eta=eta, T=t.T, eps=t.eps, seed=cfg.seed, travel_spec_every=t.travel_spec_every))
    rep.traces[tag] = tr
    rep.add(group, _convergence_report(f"{tag}_convergence", tr, t.eps, t.gd_r2_min, t.travel_max))
    return eta


def suite_train_gd(cfg, rep):
    from .losses import CrossEntropyLoss
    from .training import TrainConfig, train

    t = cfg.training
    params, data = _fc(cfg, cfg.arch.width, cfg.arch.depth)
    _train_gd(cfg, rep, params, data, "gd", "gd_convergence")
    # classification with cross-entropy
    k = t.ce_classes
    params, data = _fc(cfg, t.ce_width, cfg.arch.depth, t.ce_n, output_dim=k, label_mode="classification")
    loss = CrossEntropyLoss()
    eta = cfg.training.eta or _pick_eta(cfg, params, data, loss)
    tr = train(params, data, loss, TrainConfig(eta=eta, T=t.T, eps=1e-12, seed=cfg.seed, travel_spec_every=t.travel_spec_every))
    rep.traces["ce"] = tr
    rep.add("cross_entropy_convergence", _check_report("ce_accuracy", {"accuracy": tr.accuracy[-1]}, [{"kind": "min_ge", "key": "accuracy", "lo": 1.0}]))


def suite_train_sgd(cfg, rep):
    from .training import TrainConfig, gd_step, sgd_step, train

    t = cfg.training
    params, data = _fc(cfg, cfg.arch.width, cfg.arch.depth)
    eta = _pick_eta(cfg, params, data)
    tr = train(params, data, None, TrainConfig(eta=eta, T=t.T, eps=t.eps, batch=t.sgd_batch, seed=cfg.seed, travel_spec_every=t.travel_spec_every))
    rep.traces["sgd"] = tr
    rep.add("sgd_convergence", _convergence_report("sgd_convergence", tr, t.eps, t.sgd_r2_min))
    pg, ps = params.copy(), params.copy()
    same = True
    for _ in range(3):
        pg, _ = gd_step(pg, data, None, eta)
        ps, _ = sgd_step(ps, data, None, eta, range(data.n))
        same = same and all(bool((a == b).all()) for a, b in zip(pg.W, ps.W))
    rep.add("sgd_convergence", _check_report("sgd_full_batch_identity", {"identical": float(same)}, [{"kind": "min_ge", "key": "identical", "lo": 1.0}]))


def suite_landscape(cfg, rep):
    from .landscape import (
        landscape_slice,
        network_negative_curvature,
        normalized_gradient_direction,
        semi_smoothness_probe,
        unflatten_W,
    )
    from .netcore import objective

    b = cfg.landscape
    reports = []
    for m in sorted(set(b.trend_widths) | {b.semi_width}):
        params, data = _fc(cfg, m, b.semi_depth, b.semi_n)
        r = semi_smoothness_probe(params, data, b.omega1_scale / math.sqrt(m), b.omega2s, seed=cfg.seed)
        reports.append(r)
        if m == b.semi_width:
            rep.add(
                "semi_smoothness",
                _check_report(
                    "semi_smoothness",
                    {"r2": r.r2, "holdout_ratio": r.holdout_max_ratio, "descent_fraction": r.descent_fraction, "zero_residual": abs(r.zero_residual), "a": r.a, "c": r.c},
                    [
                        {"kind": "min_ge", "key": "r2", "lo": 0.9},
                        {"kind": "max_le", "key": "holdout_ratio", "hi": 2.0},
                        {"kind": "min_ge", "key": "descent_fraction", "lo": 0.95},
                        {"kind": "max_le", "key": "zero_residual", "hi": 0.0},
                    ],
                    predicted="R <= a w sqrt(F) + c w^2",
                ),
            )
    from .reports import ProbeReport

    rep.add(
        "semi_smoothness",
        ProbeReport(
            "semi_smoothness_first_order_trend",
            {"m": [r.m for r in reports], "a": [r.a for r in reports], "c": [r.c for r in reports], "r2": [r.r2 for r in reports]},
            {"kind": "info"},
            predicted="first-order coefficient shrinks with m",
        ),
    )
    params, data = _fc(cfg, b.oja_width, b.oja_depth)
    oja = network_negative_curvature(params, data, steps=b.oja_steps, seed=cfg.seed)
    D1, _ = normalized_gradient_direction(params, data)
    grid = landscape_slice(params, data, D1, unflatten_W(oja.direction, params.W), extent=tuple(b.grid_extent), steps=tuple(b.grid_steps))
    grid.meta["oja"] = {"rayleigh": oja.rayleigh, "gradient_rayleigh": oja.gradient_rayleigh, "converged": oja.converged, **oja.settings}
    rep.grids["grid"] = grid
    F = objective(params, data).value
    rep.add(
        "landscape_slice",
        _check_report(
            "landscape_center",
            {"center_error": abs(grid.center - F), "oja_gap": oja.rayleigh - (oja.gradient_rayleigh if oja.gradient_rayleigh is not None else oja.rayleigh)},
            [{"kind": "max_le", "key": "center_error", "hi": 1e-10}, {"kind": "max_le", "key": "oja_gap", "hi": 0.0}],
        ),
    )


def _arch_suite(cfg, rep, kind):
    from .archext import ConvSpec, ResidualSpec, conv_arch, residual_arch, spectral_product_probe_resnet
    from .datagen import generate_separated_dataset
    from .netcore import finite_difference_check, init_network
    from .theoryprobes import probe_forward_norms_pooled

    seed, delta = cfg.seed, cfg.dataset.delta

    def build(width_or_channels, depth, input_dim, s=seed):
        if kind == "cnn":
            c = cfg.cnn
            spec = ConvSpec.make(c.positions, width_or_channels, c.q, depth, delta=delta, topology=c.topology, seed=s)
            arch = conv_arch(spec, cfg.arch.output_dim)
        else:
            spec = ResidualSpec.make(width_or_channels, depth)
            arch = residual_arch(spec, input_dim, cfg.arch.output_dim)
        return init_network(arch, s, ext=spec), spec

    input_dim = cfg.cnn.positions if kind == "cnn" else cfg.arch.input_dim
    tag = kind
    # gradient exactness on small instances
    errs = []
    for s in range(3):
        small_w = 2 if kind == "cnn" else 8
        p, _ = build(small_w, 3, input_dim)
        d = generate_separated_dataset(3, input_dim, delta, seed=cfg.data_seed + s)
        errs.append(finite_difference_check(p, d))
    rep.add("gradient_exactness", _check_report(f"{tag}_gradient_check", {"rel_err": max(errs)}, [{"kind": "max_le", "key": "rel_err", "hi": 1e-5}]))
    # forward norm concentration, pooled over independent draws
    big, depth = (cfg.cnn.channels, cfg.cnn.depth) if kind == "cnn" else (cfg.resnet.width, cfg.resnet.depth)
    ic = cfg.init_check
    draws = (
        (build(big, depth, input_dim, seed + k)[0], generate_separated_dataset(ic.n, input_dim, delta, seed=cfg.data_seed + k))
        for k in range(ic.seeds)
    )
    r = probe_forward_norms_pooled(draws, eps=ic.eps, max_frac=ic.max_frac)
    r.name = f"{tag}_forward_norms"
    rep.add("forward_norm_concentration", r)
    if kind == "resnet":
        p, spec = build(big, depth, input_dim)
        x = generate_separated_dataset(1, input_dim, delta, seed=cfg.data_seed).X[0]
        pr = spectral_product_probe_resnet(spec, p, cap=cfg.resnet.cap, x=x)
        rep.add("resnet_spectral_product", _check_report("resnet_spectral_product", {"norm": pr.estimate}, [{"kind": "max_le", "key": "norm", "hi": cfg.resnet.cap}]))
        del p
    # training
    if kind == "cnn":
        p, _ = build(cfg.cnn.channels, cfg.cnn.train_depth, input_dim)
    else:
        p, _ = build(cfg.resnet.train_width, cfg.resnet.depth, input_dim)
    data = generate_separated_dataset(cfg.dataset.n, input_dim, delta, seed=cfg.data_seed)
    _train_gd(cfg, rep, p, data, f"{tag}_gd", "gd_convergence")


def suite_arch_cnn(cfg, rep):
    _arch_suite(cfg, rep, "cnn")


def suite_arch_resnet(cfg, rep):
    _arch_suite(cfg, rep, "resnet")


RUNNERS = {
    "init-check": suite_init_check,
    "stability": suite_stability,
    "ntk": suite_ntk,
    "train-gd": suite_train_gd,
    "train-sgd": suite_train_sgd,
    "landscape": suite_landscape,
    "arch-cnn": suite_arch_cnn,
    "arch-resnet": suite_arch_resnet,
}


def run_suite(cfg: ExperimentConfig, suite: str | None = None) -> ExperimentReport:
    """Execute a suite (or ``all``) in memory; nothing is written."""
    import numpy as np

    suite = suite or cfg.suite
    if suite not in RUNNERS and suite != "all":
        raise ConfigError(f"unknown suite {suite!r}")
    rep = ExperimentReport(suite, cfg.hash(), warnings=cfg.warnings())
    names = SUITES if suite == "all" else (suite,)
    with np.errstate(over="ignore", invalid="ignore"):
        for name in names:
            RUNNERS[name](cfg, rep)
    return rep


# ---------------------------------------------------------------- output


def _write_rows(path: Path, header, rows) -> Path:
    import csv

    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return path


def emit_plots_data(report: ExperimentReport, out_dir) -> list:
    """CSV series and landscape grids; an empty report writes nothing."""
    if report.empty:
        return []
    out = Path(out_dir)
    written = []
    try:
        for name, tr in sorted(report.traces.items()):
            written.append(tr.to_csv(out / f"trace_{name}.csv"))
        for name, (header, rows) in sorted(report.tables.items()):
            written.append(_write_rows(out / f"{name}.csv", header, rows))
        for name, grid in sorted(report.grids.items()):
            written.append(grid.to_csv(out / f"{name}.csv"))
            written.append(grid.write_sidecar(out / f"{name}.json"))
        for name, pr in sorted(report.probes.items()):
            if "omega" in pr.series and "values" in pr.series:
                written.append(pr.to_csv(out / f"{name}.csv"))
    except OSError as e:
        raise OSError(f"writing plot data under {out}: {e}") from e
    return written


def write_run(report: ExperimentReport, cfg: ExperimentConfig, out_dir, started: float) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    digest = report.hash()
    (out / "report.sha256").write_text(digest + "\n")
    files = emit_plots_data(report, out)
    meta = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "seconds": round(time.time() - started, 3),
        "python": platform.python_version(),
        "platform": platform.platform(),
        "files": sorted(p.name for p in files),
        "note": "" if files else "nothing to emit",
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return {"hash": digest, "files": files}


def _set_threads(k: int | None) -> None:
    """Cap BLAS threads; effective only before numpy is first imported."""
    if k is None:
        env = os.environ.get("OPL_THREADS")
        k = int(env) if env and env.isdigit() else None
    if k is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opl", description="Over-parameterization laboratory experiment runner.")
    p.add_argument("suite", choices=SUITES + ("all", "validate"))
    p.add_argument("--config", help="JSON config; defaults are used when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default: $OPL_OUT or ./opl-runs/<suite>)")
    p.add_argument("--threads", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.suite != "validate":
            cfg.suite = args.suite
        cfg.validate()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for w in cfg.warnings():
        print(f"warning: {w}", file=sys.stderr)
    if args.suite == "validate":
        print(f"config ok ({cfg.hash()[:12]})")
        return EXIT_OK
    out = Path(args.out or cfg.out or os.environ.get("OPL_OUT") or DEFAULT_OUT)
    if not (args.out or cfg.out):
        out = out / cfg.suite
    started = time.time()
    try:
        report = run_suite(cfg)
        res = write_run(report, cfg, out, started)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure inside a suite is a runtime error
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, rep in sorted(report.probes.items()):
        print(rep.summary_line())
    for key, ok in report.summary.items():
        print(f"{'PASS' if ok else 'FAIL'} [{key}]")
    print(f"report {res['hash']} -> {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
