"""Run-configuration schema: a single JSON file with a versioned layout.

Unknown keys are rejected at every level, all tolerances must be positive,
and the metric amplitude is given by its 6 upper-triangle entries in row-major
order (a11, a12, a13, a22, a23, a33).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import CATALOG_IDS, AmbientMetric, MetricPerturbation

SCHEMA_VERSION = 1

_DEFAULTS = {
    "metric": {
        "catalog": "gaussian_bump",
        "center": [0.0, 0.0, 0.0],
        "sigma": 1.0,
        "amplitude_upper": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "epsilon": 5e-3,
        "epsilon_list": None,
    },
    "grid": {"n_theta": 25, "lmax": 24},
    "cutoff": {"r1": 0.5, "r2": 1.0},
    "solver": {"tol": 1e-10, "max_iter": 50, "el_form": "printed"},
    "integrator": {"tol": 1e-10},
    "scan": {
        "box": [[-2.0, 2.0], [-2.0, 2.0], [-2.0, 2.0]],
        "rho_range": [0.5, 3.0],
        "n_p": 5,
        "n_rho": 6,
        "refine_tol": 1e-3,
        "el_form": "gradient",
    },
    "rho_fit": {"rho_min": 0.05, "rho_max": 0.25, "n_rho": 9},
    "output_dir": "out",
    "seed": 1234,
    "threads": 1,
}


def _merge_checked(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"expected a table at {path or 'top level'}")
    out = {}
    for key, dval in defaults.items():
        if key in given:
            gval = given[key]
            if isinstance(dval, dict):
                out[key] = _merge_checked(dval, gval, f"{path}{key}.")
            else:
                out[key] = gval
        else:
            out[key] = {k: v for k, v in dval.items()} if isinstance(dval, dict) else dval
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {sorted(unknown)}")
    return out


def _sym_from_upper(upper):
    upper = np.asarray(upper, dtype=float).reshape(6)
    a = np.zeros((3, 3))
    a[0, 0], a[0, 1], a[0, 2], a[1, 1], a[1, 2], a[2, 2] = upper
    return a + np.triu(a, 1).T


@dataclass
class RunConfig:
    raw: dict
    perturbation: MetricPerturbation = field(init=False)

    def __post_init__(self):
        m = self.raw["metric"]
        if m["catalog"] not in CATALOG_IDS or m["catalog"] == "custom":
            raise ConfigError(f"config catalog must be one of "
                              f"{[c for c in CATALOG_IDS if c != 'custom']}")
        sigma = m["sigma"]
        if np.any(np.asarray(sigma, dtype=float) <= 0):
            raise ConfigError("metric.sigma must be positive")
        for sect, key in (("solver", "tol"), ("integrator", "tol"),
                          ("scan", "refine_tol")):
            if self.raw[sect][key] <= 0:
                raise ConfigError(f"{sect}.{key} must be positive")
        if not 0 < self.raw["cutoff"]["r1"] < self.raw["cutoff"]["r2"]:
            raise ConfigError("cutoff must satisfy 0 < r1 < r2")
        if self.raw["grid"]["lmax"] > self.raw["grid"]["n_theta"] - 1:
            raise ConfigError("grid.lmax must be <= n_theta - 1")
        try:
            self.perturbation = MetricPerturbation(
                m["catalog"], m["center"], sigma, _sym_from_upper(m["amplitude_upper"]))
        except ValueError as exc:
            raise ConfigError(str(exc))

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version}")
        return cls(_merge_checked(_DEFAULTS, data))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.setdefault("schema_version", SCHEMA_VERSION)
        version = data.pop("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version}")
        return cls(_merge_checked(_DEFAULTS, data))

    def __getitem__(self, key):
        return self.raw[key]

    def metric(self, epsilon=None) -> AmbientMetric:
        eps = self.raw["metric"]["epsilon"] if epsilon is None else epsilon
        return AmbientMetric(self.perturbation, float(eps))

    def epsilon_list(self):
        lst = self.raw["metric"]["epsilon_list"]
        if lst is None:
            e = self.raw["metric"]["epsilon"]
            return [e / 2**k for k in range(4)]
        return [float(v) for v in lst]

    def reduction_setup(self, epsilon=None, el_form=None, n_theta=None, lmax=None):
        from .reduction import ReductionSetup
        return ReductionSetup(
            metric=self.metric(epsilon),
            n_theta=n_theta if n_theta is not None else self.raw["grid"]["n_theta"],
            lmax=lmax if lmax is not None else self.raw["grid"]["lmax"],
            r1=self.raw["cutoff"]["r1"], r2=self.raw["cutoff"]["r2"],
            solver_tol=self.raw["solver"]["tol"],
            max_iter=self.raw["solver"]["max_iter"],
            integrator_tol=self.raw["integrator"]["tol"],
            el_form=el_form if el_form is not None else self.raw["solver"]["el_form"])
