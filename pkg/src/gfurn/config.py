"""Experiment configuration files.

Files are line-oriented ``key = value`` pairs, optionally grouped under
``[section]`` headers; ``[rule]`` followed by ``p1 = 0.7`` is the same as
``rule.p1 = 0.7`` at top level.  Values are JSON where they parse as JSON
and bare strings otherwise.  ``#`` and ``;`` start comment lines.
Keys outside ``rule.*`` that are not listed below are rejected.

Schema (version 1)::

    schema_version = 1

    rule.kind = rpw | homogeneous | deterministic | multinomial | nonhomogeneous
    rule.p1, rule.p2          two-arm success probabilities
    rule.d1, rule.d2          two-arm response laws [[values], [weights]]
    rule.row1 .. rule.rowd    homogeneous row laws [[[D row], weight], ...]
    rule.H                    deterministic mean matrix
    rule.v                    multinomial color law
    rule.base.*               nonhomogeneous base rule (same keys as rule.*)
    rule.E, rule.alpha        nonhomogeneous H_m = H + m**-alpha E

    urn.Y0                    initial composition (default: all ones)
    experiment.horizons, experiment.replicates, experiment.seed,
    experiment.regime, experiment.tolerance, experiment.ks_alpha
    run.threads, run.deterministic
    analysis.eig_tol, analysis.nu, analysis.quad_tol
    simulate.n, simulate.seed
    limit.paths, limit.grid_points, limit.t, limit.seed
    output.json, output.csv, output.trajectory
"""

import configparser
import json

import numpy as np

from .exceptions import ConfigError
from .rules import (
    PowerDecay,
    RpwParams,
    deterministic_rule,
    homogeneous_rule,
    multinomial_rule,
    nonhomogeneous_wrapper,
    rpw_rule,
)

SCHEMA_VERSION = 1
_ROOT = "__root__"
_KNOWN = {
    "schema_version", "urn.Y0",
    "experiment.horizons", "experiment.replicates", "experiment.seed", "experiment.regime",
    "experiment.tolerance", "experiment.ks_alpha",
    "run.threads", "run.deterministic",
    "analysis.eig_tol", "analysis.nu", "analysis.quad_tol",
    "simulate.n", "simulate.seed",
    "limit.paths", "limit.grid_points", "limit.t", "limit.seed",
    "output.json", "output.csv", "output.trajectory",
}


def _value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def parse_config_text(text):
    """Flat ``{dotted.key: value}`` dict from config text."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, strict=True,
                                       delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    flat = {}
    for section in parser.sections():
        prefix = "" if section == _ROOT else section + "."
        for key, raw in parser.items(section):
            name = prefix + key
            if name in flat:
                raise ConfigError(f"duplicate key {name!r}")
            if name not in _KNOWN and not name.startswith("rule."):
                raise ConfigError(f"unknown key {name!r}")
            flat[name] = _value(raw)
    version = flat.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return flat


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _sub(flat, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in flat.items() if k.startswith(prefix)}


def _require(spec, key, where):
    if key not in spec:
        raise ConfigError(f"missing {where}{key}")
    return spec[key]


def build_rule(spec, where="rule."):
    """Rule object from the ``rule.*`` keys (prefix already stripped)."""
    kind = spec.get("kind", "rpw")
    try:
        if kind == "rpw":
            return rpw_rule(RpwParams(p1=spec.get("p1"), p2=spec.get("p2"),
                                      d1=spec.get("d1"), d2=spec.get("d2")))
        if kind == "homogeneous":
            rows = []
            q = 1
            while f"row{q}" in spec:
                pairs = spec[f"row{q}"]
                support = np.array([p[0] for p in pairs], dtype=float)
                weights = np.array([p[1] for p in pairs], dtype=float)
                rows.append((support, weights))
                q += 1
            if not rows:
                raise ConfigError(f"{where}kind = homogeneous needs {where}row1 ..")
            return homogeneous_rule(rows, nonnegative=bool(spec.get("nonnegative", True)))
        if kind == "deterministic":
            return deterministic_rule(_require(spec, "H", where))
        if kind == "multinomial":
            return multinomial_rule(_require(spec, "v", where))
        if kind == "nonhomogeneous":
            base = build_rule(_sub(spec, "base."), where + "base.")
            E = np.asarray(_require(spec, "E", where), dtype=float)
            alpha = float(_require(spec, "alpha", where))
            return nonhomogeneous_wrapper(base, PowerDecay(base.H, E, alpha))
    except (TypeError, IndexError, KeyError) as exc:
        raise ConfigError(f"malformed {where} spec: {exc}") from exc
    raise ConfigError(f"unknown {where}kind {kind!r}")


def rule_from_config(flat):
    return build_rule(_sub(flat, "rule."))


def initial_composition(flat, dim):
    Y0 = flat.get("urn.Y0")
    if Y0 is None:
        return np.ones(dim)
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.shape != (dim,):
        raise ConfigError(f"urn.Y0 must have {dim} entries")
    return Y0


def experiment_config(flat, seed=None, threads=None, deterministic=None):
    """:class:`~gfurn.harness.ExperimentConfig` from a parsed file plus CLI overrides."""
    from .harness import ExperimentConfig

    rule = rule_from_config(flat)
    return ExperimentConfig(
        rule=rule,
        Y0=initial_composition(flat, rule.dim),
        horizons=_require(flat, "experiment.horizons", ""),
        replicates=int(_require(flat, "experiment.replicates", "")),
        master_seed=int(seed if seed is not None else flat.get("experiment.seed", 0)),
        regime=flat.get("experiment.regime"),
        tolerance=float(flat.get("experiment.tolerance", 0.05)),
        ks_alpha=float(flat.get("experiment.ks_alpha", 1e-3)),
        threads=int(threads if threads is not None else flat.get("run.threads", 1)),
        deterministic=bool(deterministic if deterministic is not None
                           else flat.get("run.deterministic", False)),
        out_json=flat.get("output.json"),
        out_csv=flat.get("output.csv"),
        eig_tol=float(flat.get("analysis.eig_tol", 1e-9)),
        nu=flat.get("analysis.nu"),
        quad_tol=float(flat.get("analysis.quad_tol", 1e-10)),
        rule_spec=_sub(flat, "rule."),
    )
