"""Experiment configuration files.

The format is INI-style: ``[section]`` headers and ``key = value`` lines,
``#`` comments. Unknown keys, bad values and cross-field problems are all
collected and reported together with their line numbers.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .metrics import parse_metric
from .surrogates import SurrogateSpec, subsets_overlap

EXPERIMENTS = ("gmean_sim", "macro_f_noise", "prbep", "proxy_labels", "grad_error_vs_k", "custom")

PRESETS = {
    "gmean_sim": {
        "source": "simulated",
        "surrogates": ["hinge:positives", "hinge:negatives"],
        "metric": "gmean",
        "methods": ["logreg", "post_shift", "proposed"],
        "eta": 1.0,
        "sigma": 0.5,
    },
    "macro_f_noise": {
        "surrogates": ["hinge:group0_positives", "hinge:group0_negatives",
                       "hinge:group1_positives", "hinge:group1_negatives"],
        "metric": "macro_f",
        "methods": ["logreg", "post_shift", "proposed"],
        "noise_fractions": [0.0, 0.2, 0.4, 0.6, 0.8],
        "eta": 0.5,
        "sigma": 0.1,
    },
    "prbep": {
        "surrogates": ["precision_at_recall:all:0.25", "precision_at_recall:all:0.5",
                       "precision_at_recall:all:0.75"],
        "metric": "prbep",
        "methods": ["logreg", "proposed"],
        "split": (0.6, 0.2, 0.2),
        "eta": 0.005,
        "sigma": 1.5,
    },
    "proxy_labels": {
        "surrogates": ["hinge:positives", "hinge:negatives"],
        "metric": "error",
        "methods": ["logreg", "post_shift", "proposed"],
        "eta": 0.1,
        "sigma": 0.1,
    },
    "grad_error_vs_k": {"methods": []},
    "custom": {"methods": ["logreg", "post_shift", "proposed"]},
}


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    seeds: list = field(default_factory=lambda: [0])
    output: Optional[str] = None
    # data
    source: str = "simulated"
    n: int = 5000
    positive_frac: float = 0.10
    label_column: str = "label"
    group_column: Optional[str] = None
    group_map: Optional[dict] = None
    binary_columns: list = field(default_factory=list)
    true_label_column: Optional[str] = None
    exclude_columns: list = field(default_factory=list)
    split: tuple = (4 / 9, 2 / 9, 1 / 3)
    noise_fractions: list = field(default_factory=lambda: [0.0])
    noise_group: int = 0
    flip_prob: float = 0.9
    # model
    surrogates: list = field(default_factory=list)
    metric: str = "error"
    methods: list = field(default_factory=list)
    # optimizer
    T: int = 250
    eta: float = 1.0
    proj_step: float = 1.0
    proj_iters: int = 100
    init: str = "zero"
    model_selection: Optional[str] = None
    # estimator
    estimator: str = "interp"
    m: int = 1000
    sigma: float = 0.1
    sigma2: Optional[float] = None
    minibatch: Optional[int] = None
    truncation_L: Optional[float] = None
    # baselines
    logreg_step: float = 1.0
    logreg_iters: int = 1000
    # tuning
    tune: bool = False
    eta_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.5, 1.0, 5.0])
    sigma_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.5])
    # gradient-error study
    k_values: list = field(default_factory=lambda: list(range(2, 11)))
    study_perturbations: int = 100
    study_draws: int = 100
    study_trials: int = 100
    study_sigma: float = 0.01

    @property
    def surrogate_specs(self) -> list:
        return [SurrogateSpec.parse(s) for s in self.surrogates]


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _floats(v):
    return [float(x) for x in re.split(r"[,\s]+", v.strip()) if x]


def _ints(v):
    return [int(x) for x in re.split(r"[,\s]+", v.strip()) if x]


def _fraction(tok):
    if "/" in tok:
        a, b = tok.split("/")
        return float(a) / float(b)
    return float(tok)


def _bool(v):
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt(conv):
    return lambda v: None if v.strip().lower() in ("", "none") else conv(v)


def _group_map(v):
    out = {}
    for item in v.split(","):
        k, _, g = item.partition(":")
        if not _:
            raise ValueError(f"group_map entry {item!r} is not value:id")
        out[k.strip()] = int(g)
    return out


def _list(v):
    return [x.strip() for x in v.split(",") if x.strip()]


# section -> key -> (attribute, converter)
SCHEMA = {
    "experiment": {
        "kind": ("experiment", str.strip),
        "seeds": ("seeds", _ints),
        "output": ("output", _opt(str.strip)),
        "methods": ("methods", _list),
    },
    "data": {
        "source": ("source", str.strip),
        "n": ("n", int),
        "positive_frac": ("positive_frac", float),
        "label_column": ("label_column", str.strip),
        "group_column": ("group_column", _opt(str.strip)),
        "group_map": ("group_map", _opt(_group_map)),
        "binary_columns": ("binary_columns", _list),
        "true_label_column": ("true_label_column", _opt(str.strip)),
        "exclude_columns": ("exclude_columns", _list),
        "split": ("split", lambda v: tuple(_fraction(t) for t in _list(v))),
        "noise_fractions": ("noise_fractions", _floats),
        "noise_group": ("noise_group", int),
        "flip_prob": ("flip_prob", float),
    },
    "surrogates": {"specs": ("surrogates", _list)},
    "metric": {"kind": ("metric", str.strip)},
    "optimizer": {
        "T": ("T", int),
        "eta": ("eta", float),
        "proj_step": ("proj_step", float),
        "proj_iters": ("proj_iters", int),
        "init": ("init", str.strip),
        "model_selection": ("model_selection", _opt(str.strip)),
    },
    "estimator": {
        "kind": ("estimator", str.strip),
        "m": ("m", int),
        "sigma": ("sigma", float),
        "sigma2": ("sigma2", _opt(float)),
        "minibatch": ("minibatch", _opt(int)),
        "truncation_L": ("truncation_L", _opt(float)),
    },
    "baselines": {
        "logreg_step": ("logreg_step", float),
        "logreg_iters": ("logreg_iters", int),
    },
    "tuning": {
        "enabled": ("tune", _bool),
        "eta_grid": ("eta_grid", _floats),
        "sigma_grid": ("sigma_grid", _floats),
    },
    "study": {
        "k_values": ("k_values", _ints),
        "perturbations": ("study_perturbations", int),
        "draws": ("study_draws", int),
        "trials": ("study_trials", int),
        "sigma": ("study_sigma", float),
    },
}


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), i)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
        if section is not None:
            index.setdefault((section, key), i)
    return index


def parse_config_text(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    errors = []
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None

    def where(sec, key=None):
        ln = lines.get((sec, key)) or lines.get((sec, None))
        return f"line {ln}" if ln else "config"

    kind = parser.get("experiment", "kind", fallback="custom").strip()
    if kind not in EXPERIMENTS:
        errors.append(f"{where('experiment', 'kind')}: unknown experiment {kind!r}; expected one of {EXPERIMENTS}")
        kind = "custom"
    cfg = ExperimentConfig(experiment=kind)
    preset = PRESETS[kind]
    for key, val in preset.items():
        setattr(cfg, key, list(val) if isinstance(val, list) else val)

    for sec in parser.sections():
        if sec not in SCHEMA:
            errors.append(f"{where(sec)}: unknown section [{sec}]")
            continue
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                errors.append(f"{where(sec, key)}: unknown key {key!r} in [{sec}]")
                continue
            attr, conv = SCHEMA[sec][key]
            try:
                setattr(cfg, attr, conv(raw))
            except (ValueError, TypeError) as exc:
                errors.append(f"{where(sec, key)}: bad value for {sec}.{key}: {exc}")

    errors += [f"{where(*loc)}: {msg}" for loc, msg in _cross_checks(cfg, base_dir)]
    if errors:
        raise ConfigError(errors)
    if cfg.source != "simulated":
        cfg.source = str((base_dir / cfg.source).resolve()) if not Path(cfg.source).is_absolute() else cfg.source
    return cfg


def _cross_checks(cfg: ExperimentConfig, base_dir: Path):
    out = []
    if not cfg.seeds:
        out.append((("experiment", "seeds"), "seed list is empty"))
    specs = []
    for text in cfg.surrogates:
        try:
            specs.append(SurrogateSpec.parse(text))
        except ValueError as exc:
            out.append((("surrogates", "specs"), f"surrogate {text!r}: {exc}"))
    if cfg.experiment != "grad_error_vs_k":
        if not cfg.surrogates and "proposed" in cfg.methods:
            out.append((("surrogates", "specs"), "no surrogates given"))
        try:
            parse_metric(cfg.metric)
        except ValueError as exc:
            out.append((("metric", "kind"), str(exc)))
        if cfg.source != "simulated":
            p = Path(cfg.source)
            if not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                out.append((("data", "source"), f"data file {str(p)!r} does not exist"))
        if cfg.experiment in ("macro_f_noise", "proxy_labels") and cfg.source == "simulated":
            out.append((("data", "source"), f"{cfg.experiment} needs a CSV source"))
        if cfg.experiment == "macro_f_noise" and not cfg.group_column:
            out.append((("data", "group_column"), "macro_f_noise needs a group column"))
        if cfg.experiment == "proxy_labels" and not cfg.true_label_column:
            out.append((("data", "true_label_column"), "proxy_labels needs true_label_column"))
    for m in cfg.methods:
        if m not in ("logreg", "post_shift", "proposed"):
            out.append((("experiment", "methods"), f"unknown method {m!r}"))
    if len(cfg.split) != 3 or abs(sum(cfg.split) - 1.0) > 1e-9 or not all(0 < f < 1 for f in cfg.split):
        out.append((("data", "split"), f"split {cfg.split} must be three fractions in (0,1) summing to 1"))
    if not 0 < cfg.positive_frac < 1:
        out.append((("data", "positive_frac"), "positive_frac must lie in (0, 1)"))
    if cfg.estimator not in ("fd", "interp", "two_step"):
        out.append((("estimator", "kind"), f"unknown estimator {cfg.estimator!r}"))
    if cfg.estimator in ("fd", "two_step"):
        for i, a in enumerate(specs):
            for b in specs[i + 1:]:
                if subsets_overlap(a, b):
                    out.append((("surrogates", "specs"),
                                f"estimator {cfg.estimator} needs disjoint subsets but {a} and {b} overlap"))
    if cfg.estimator == "two_step" and cfg.sigma2 is None and cfg.truncation_L is None:
        out.append((("estimator", "sigma2"), "two_step estimator needs sigma2 or truncation_L"))
    if cfg.estimator != "two_step" and cfg.sigma2 is not None:
        out.append((("estimator", "sigma2"), "sigma2 is only valid for the two_step estimator"))
    for attr, sec, key in [("T", "optimizer", "T"), ("m", "estimator", "m"),
                           ("proj_iters", "optimizer", "proj_iters")]:
        if getattr(cfg, attr) < 1:
            out.append(((sec, key), f"{key} must be >= 1"))
    for attr, sec, key in [("eta", "optimizer", "eta"), ("sigma", "estimator", "sigma"),
                           ("proj_step", "optimizer", "proj_step")]:
        if not getattr(cfg, attr) > 0:
            out.append(((sec, key), f"{key} must be positive"))
    if cfg.init not in ("zero", "logreg"):
        out.append((("optimizer", "init"), "init must be zero or logreg"))
    if cfg.model_selection not in (None, "last", "best_val_metric"):
        out.append((("optimizer", "model_selection"), "model_selection must be last or best_val_metric"))
    if any(not 0 <= f <= 1 for f in cfg.noise_fractions):
        out.append((("data", "noise_fractions"), "noise fractions must lie in [0, 1]"))
    if cfg.experiment == "grad_error_vs_k" and any(k < 1 for k in cfg.k_values):
        out.append((("study", "k_values"), "K values must be >= 1"))
    return out


def validate_config(path) -> ExperimentConfig:
    """Parse and validate a config file; raises :class:`ConfigError` listing every problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {str(path)!r} does not exist"])
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)
