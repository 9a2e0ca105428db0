"""Experiment configuration: flat key=value files with typed validation.

Every key is validated before any run starts; unknown keys are rejected.
Flags from the command line override file values. The effective configuration
is echoed at startup and hashed so result rows are traceable.
"""

import hashlib
import os
from dataclasses import dataclass, field

ALLOWED_SAMPLES = (2, 4, 8, 16, 32)
ALLOWED_FAKES = (0, 5, 50, 500)
ALLOWED_METHODS = ("pfl", "dfl", "surrogate", "surrogate_gaussian")
ALLOWED_PROBLEMS = ("inventory", "budget", "portfolio")

OUTPUT_ROOT_ENV = "DFLKIT_OUTPUT_ROOT"

METHOD_DESCRIPTIONS = {
    "pfl": "two-stage baseline: fit predictions to targets, then optimize",
    "dfl": "exact differentiation through the closed-form solver (portfolio only)",
    "surrogate": "train through a convex surrogate fitted on model-based samples",
    "surrogate_gaussian": "train through a convex surrogate fitted on Gaussian-perturbed samples",
}


def _parse_bool(s):
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).replace(",", " ").split()]


def _parse_str_list(s):
    if isinstance(s, (list, tuple)):
        return [str(v) for v in s]
    return [v for v in str(s).replace(",", " ").split() if v]


@dataclass
class FieldSpec:
    parse: callable
    default: object
    help: str


SCHEMA = {
    "problem": FieldSpec(str, "inventory", "one of " + ", ".join(ALLOWED_PROBLEMS)),
    "methods": FieldSpec(_parse_str_list, ["pfl", "surrogate"],
                         "subset of " + ", ".join(ALLOWED_METHODS)),
    "samples": FieldSpec(_parse_int_list, [32], "sample counts, subset of {2,4,8,16,32}"),
    "fakes": FieldSpec(_parse_int_list, None, "fake-target counts (budget only), subset of {0,5,50,500}"),
    "seeds": FieldSpec(int, 5, "number of repetitions"),
    "base_seed": FieldSpec(int, 0, "first seed of the repetition range"),
    "reseed": FieldSpec(str, "data+model", "'data+model' reseeds everything per run; 'model-only' fixes the data seed"),
    "out": FieldSpec(str, "", "output directory (default: $" + OUTPUT_ROOT_ENV + " or ./results)"),
    "workers": FieldSpec(int, 0, "worker processes; 0 means available parallelism"),
    "hidden_width": FieldSpec(int, 0, "predictive/sampler hidden width; 0 = per-problem default"),
    "predictive_lr": FieldSpec(float, 1e-3, "learning rate for predictive training"),
    "predictive_epochs": FieldSpec(int, 600, "epochs for predictive training"),
    "predictive_optimizer": FieldSpec(str, "adam", "adam or sgd"),
    "patience": FieldSpec(int, 30, "early-stopping patience, in epochs"),
    "eval_every": FieldSpec(int, 1, "validation cadence for regret-based selection"),
    "sampler_lr": FieldSpec(float, 0.0, "mirror-model learning rate; 0 = per-problem default"),
    "sampler_optimizer": FieldSpec(str, "sgd", "mirror-model optimizer"),
    "gaussian_sigma": FieldSpec(float, 0.1, "noise scale for the Gaussian sampler"),
    "surrogate_width": FieldSpec(int, 2, "convex-path hidden width"),
    "surrogate_layers": FieldSpec(int, 1, "number of convex-path hidden layers"),
    "surrogate_lr": FieldSpec(float, 3e-2, "surrogate fit learning rate (staged decay applies)"),
    "surrogate_epochs": FieldSpec(int, 2000, "total surrogate fit epochs"),
    "n_train": FieldSpec(int, 0, "training instances; 0 = per-problem default"),
    "n_val": FieldSpec(int, 0, "validation instances; 0 = per-problem default"),
    "n_test": FieldSpec(int, 0, "test instances; 0 = per-problem default"),
    "save_models": FieldSpec(_parse_bool, False, "write the selected model per run"),
    "cache_samples": FieldSpec(_parse_bool, False, "cache sample triples per run config"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def echo(self):
        lines = ["effective configuration:"]
        for key in SCHEMA:
            lines.append(f"  {key} = {format_value(self.values[key])}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        """Hash of everything that determines run outcomes (output knobs excluded)."""
        skip = {"out", "workers", "save_models"}
        blob = "|".join(
            f"{k}={format_value(self.values[k])}" for k in sorted(SCHEMA) if k not in skip
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def format_value(v):
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment; unknown keys are rejected."""
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def build_config(file_values=None, overrides=None) -> ExperimentConfig:
    """Merge defaults, file values, and flag overrides; validate everything."""
    merged = {}
    sources = [file_values or {}, overrides or {}]
    for src in sources:
        for key in src:
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
    for key, spec in SCHEMA.items():
        value = spec.default
        for src in sources:
            if key in src and src[key] is not None:
                try:
                    value = spec.parse(src[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"field {key!r}: {exc}") from None
        merged[key] = value
    cfg = ExperimentConfig(merged)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    v = cfg.values
    if v["problem"] not in ALLOWED_PROBLEMS:
        raise ConfigError(f"field 'problem': unknown problem {v['problem']!r}; "
                          f"choose from {', '.join(ALLOWED_PROBLEMS)}")
    for m in v["methods"]:
        if m not in ALLOWED_METHODS:
            raise ConfigError(f"field 'methods': unknown method {m!r}; "
                              f"choose from {', '.join(ALLOWED_METHODS)}")
    if not v["methods"]:
        raise ConfigError("field 'methods': at least one method required")
    if "dfl" in v["methods"] and v["problem"] != "portfolio":
        raise ConfigError("field 'methods': 'dfl' (exact differentiation) is only valid "
                          "for the portfolio problem")
    for k in v["samples"]:
        if k not in ALLOWED_SAMPLES:
            raise ConfigError(f"field 'samples': invalid sample count {k}; "
                              f"allowed values are {ALLOWED_SAMPLES}")
    if not v["samples"]:
        raise ConfigError("field 'samples': at least one sample count required")
    if v["fakes"] is not None:
        if v["problem"] != "budget":
            raise ConfigError("field 'fakes': fake targets apply to the budget problem only")
        for f in v["fakes"]:
            if f not in ALLOWED_FAKES:
                raise ConfigError(f"field 'fakes': invalid fake-target count {f}; "
                                  f"allowed values are {ALLOWED_FAKES}")
    if v["seeds"] < 1:
        raise ConfigError("field 'seeds': need at least one repetition")
    if v["reseed"] not in ("data+model", "model-only"):
        raise ConfigError("field 'reseed': must be 'data+model' or 'model-only'")
    if v["workers"] < 0:
        raise ConfigError("field 'workers': must be >= 0")
    for key in ("predictive_lr", "surrogate_lr"):
        if v[key] <= 0:
            raise ConfigError(f"field {key!r}: must be > 0")
    if v["sampler_lr"] < 0:
        raise ConfigError("field 'sampler_lr': must be >= 0 (0 = default)")
    for key in ("predictive_epochs", "surrogate_epochs", "patience", "eval_every",
                "surrogate_width", "surrogate_layers"):
        if v[key] < 1:
            raise ConfigError(f"field {key!r}: must be >= 1")
    if v["predictive_optimizer"] not in ("adam", "sgd"):
        raise ConfigError("field 'predictive_optimizer': must be 'adam' or 'sgd'")
    if v["sampler_optimizer"] not in ("adam", "sgd"):
        raise ConfigError("field 'sampler_optimizer': must be 'adam' or 'sgd'")
    for key in ("n_train", "n_val", "n_test"):
        if v[key] < 0:
            raise ConfigError(f"field {key!r}: must be >= 0 (0 = default)")
    if not v["out"]:
        v["out"] = os.environ.get(OUTPUT_ROOT_ENV, "results")
