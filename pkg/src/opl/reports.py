"""ProbeReport: a named bundle of series plus the rule that decides pass/fail.

The pass flag is never stored independently of the data: ``passed`` is
recomputed from ``series`` and ``rule`` by :func:`evaluate_rule`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import loglog_fit


def _plain(v):
    """numpy -> JSON-friendly python, non-finite floats become strings."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    return v


def evaluate_rule(series: dict, rule: dict) -> tuple[bool, dict]:
    """Apply one pass/fail rule to a report's series; returns (passed, derived stats).

    Rule kinds:
      slope        log-log slope of series[y] vs series[x] in [lo, hi], R^2 >= r2_min
      max_le       max(series[key]) <= hi
      min_ge       min(series[key]) >= lo
      frac_outside fraction of series[key] outside [lo, hi] is <= max_frac
      ratio_within max/min of series[key] <= factor
      within_first every value within a factor of the first one
      decreasing   series[key] strictly decreasing
      all          every sub-rule in rule["rules"] passes
      info         always passes (report only)
    """
    kind = rule["kind"]
    if kind == "info":
        return True, {}
    if kind == "all":
        stats, ok = {}, True
        for i, sub in enumerate(rule["rules"]):
            p, s = evaluate_rule(series, sub)
            ok = ok and p
            stats[f"rule{i}"] = {"passed": p, **s}
        return ok, stats
    if kind == "slope":
        x = np.asarray(series[rule["x"]], dtype=np.float64)
        y = np.asarray(series[rule["y"]], dtype=np.float64)
        keep = (x > 0) & (y > 0)
        if keep.sum() < 2:
            return False, {"slope": float("nan"), "r2": float("nan")}
        fit = loglog_fit(x[keep], y[keep])
        ok = rule["lo"] <= fit.slope <= rule["hi"] and fit.r2 >= rule.get("r2_min", -np.inf)
        return bool(ok), {"slope": fit.slope, "r2": fit.r2, "points": int(keep.sum())}
    vals = np.asarray(series[rule["key"]], dtype=np.float64).ravel()
    if vals.size == 0:
        return False, {"empty": True}
    if kind == "max_le":
        top = float(np.max(vals))
        return bool(top <= rule["hi"]), {"max": top}
    if kind == "min_ge":
        low = float(np.min(vals))
        return bool(low >= rule["lo"]), {"min": low}
    if kind == "frac_outside":
        frac = float(np.mean((vals < rule["lo"]) | (vals > rule["hi"])))
        return bool(frac <= rule["max_frac"]), {"fraction_outside": frac}
    if kind == "ratio_within":
        lo, hi = float(np.min(vals)), float(np.max(vals))
        ratio = hi / lo if lo > 0 else float("inf")
        return bool(lo > 0 and ratio <= rule["factor"]), {"ratio": ratio}
    if kind == "within_first":
        f = rule["factor"]
        first = vals[0]
        ok = bool(first > 0 and np.all(vals >= first / f) and np.all(vals <= first * f))
        return ok, {"max_over_first": float(np.max(vals) / first) if first > 0 else float("inf")}
    if kind == "decreasing":
        ok = bool(np.all(np.diff(vals) < 0))
        return ok, {}
    raise ValueError(f"unknown rule kind {kind!r}")


@dataclass
class ProbeReport:
    name: str
    series: dict
    rule: dict
    predicted: str = ""
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = {k: _plain(v) for k, v in self.series.items()}
        self._evaluate()

    def _evaluate(self):
        self.passed, self.stats = evaluate_rule(self.series, self.rule)

    @property
    def slope(self) -> float | None:
        return self.stats.get("slope")

    @property
    def r2(self) -> float | None:
        return self.stats.get("r2")

    def recheck(self) -> bool:
        """Recompute the flag from the stored series and confirm it matches."""
        passed, _ = evaluate_rule(self.series, self.rule)
        return passed == self.passed

    def to_dict(self) -> dict:
        return _plain(
            {
                "name": self.name,
                "predicted": self.predicted,
                "series": self.series,
                "rule": self.rule,
                "stats": self.stats,
                "passed": self.passed,
                "notes": list(self.notes),
                "meta": self.meta,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeReport":
        return cls(d["name"], d["series"], d["rule"], d.get("predicted", ""), d.get("notes", []), d.get("meta", {}))

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def to_csv(self, path, value_key: str = "values", omega_key: str = "omega") -> Path:
        """Sweep series as rows (omega, layer, value); ``values`` is omega x layer."""
        path = Path(path)
        omegas = self.series[omega_key]
        values = self.series[value_key]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", "layer", "value"])
            for om, row in zip(omegas, values):
                row = row if isinstance(row, list) else [row]
                for layer, v in enumerate(row):
                    w.writerow([repr(float(om)), layer, repr(float(v))])
        return path

    def summary_line(self) -> str:
        detail = ", ".join(f"{k}={v:.4g}" for k, v in self.stats.items() if isinstance(v, float))
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f" ({detail})" if detail else "")
