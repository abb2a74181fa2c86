"""Flat ``key = value`` pipeline configuration.

One schema covers every command; each command reads the keys it needs.
Unknown keys are rejected so typos fail loudly.  Command-line overrides
(``--set key=value``) use the same names and win over file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from tidalflow.clustering import METHODS, StabilityConfig
from tidalflow.factorization import EpochSplits, TrainConfig


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or ill-typed configuration entries."""


def _parse_int(text):
    return int(text, 10)


def _parse_optional_int(text):
    return None if text == "" else int(text, 10)


def _parse_float(text):
    return float(text)


def _parse_str(text):
    return text


def _parse_methods(text):
    methods = tuple(part.strip() for part in text.split(",") if part.strip())
    if not methods:
        raise ValueError("empty method list")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
    return methods


# key -> (parser, default); the parser also documents the value type.
SCHEMA = {
    "trips_csv": (_parse_str, ""),
    "synth_spec": (_parse_str, ""),
    "out_dir": (_parse_str, "out"),
    "seed": (_parse_int, 0),
    "epoch_count": (_parse_int, 24),
    "morning_end": (_parse_int, 11),
    "afternoon_start": (_parse_int, 14),
    "min_trips": (_parse_int, 1),
    "max_trips": (_parse_optional_int, None),
    "n_components": (_parse_int, 6),
    "alpha": (_parse_float, 0.1),
    "eta": (_parse_float, 0.5),
    "gamma": (_parse_float, 1.0),
    "rho": (_parse_float, 1.0),
    "learning_rate": (_parse_float, 1e-3),
    "warmup_iters": (_parse_int, 200),
    "max_iters": (_parse_int, 2000),
    "mse_tolerance": (_parse_float, 1e-6),
    "min_mass_ratio": (_parse_float, 0.05),
    "projection_max_iters": (_parse_int, 500),
    "projection_tolerance": (_parse_float, 1e-6),
    "n_clusters": (_parse_int, 6),
    "kmeans_max_iters": (_parse_int, 300),
    "score_components": (_parse_str, "all"),
    "score_epochs": (_parse_str, "all"),
    "methods": (_parse_methods, ("naive", "nmf", "s2u", "control")),
    "n_training_sets": (_parse_int, 5),
    "train_size": (_parse_int, 300),
    "test_size": (_parse_int, 400),
    "repetitions": (_parse_int, 10),
}

# keys that name filesystem locations; excluded from artifact echoes so
# outputs stay byte-identical across working directories
PATH_KEYS = ("trips_csv", "synth_spec", "out_dir")


@dataclass(frozen=True)
class PipelineConfig:
    """Typed view of the full configuration (see SCHEMA for defaults)."""

    trips_csv: str
    synth_spec: str
    out_dir: str
    seed: int
    epoch_count: int
    morning_end: int
    afternoon_start: int
    min_trips: int
    max_trips: int | None
    n_components: int
    alpha: float
    eta: float
    gamma: float
    rho: float
    learning_rate: float
    warmup_iters: int
    max_iters: int
    mse_tolerance: float
    min_mass_ratio: float
    projection_max_iters: int
    projection_tolerance: float
    n_clusters: int
    kmeans_max_iters: int
    score_components: str
    score_epochs: str
    methods: tuple[str, ...]
    n_training_sets: int
    train_size: int
    test_size: int
    repetitions: int

    def epoch_splits(self):
        return EpochSplits(morning_end=self.morning_end,
                           afternoon_start=self.afternoon_start)

    def train_config(self, seed):
        return TrainConfig(
            n_components=self.n_components,
            alpha=self.alpha,
            eta=self.eta,
            gamma=self.gamma,
            rho=self.rho,
            learning_rate=self.learning_rate,
            warmup_iters=self.warmup_iters,
            max_iters=self.max_iters,
            mse_tolerance=self.mse_tolerance,
            min_mass_ratio=self.min_mass_ratio,
            seed=seed,
        )

    def stability_config(self, seed):
        return StabilityConfig(
            n_training_sets=self.n_training_sets,
            train_size=self.train_size,
            test_size=self.test_size,
            n_clusters=self.n_clusters,
            repetitions=self.repetitions,
            seed=seed,
        )

    def echo(self):
        """Non-path configuration as a plain dict, for embedding in artifacts."""
        out = {}
        for f in fields(self):
            if f.name in PATH_KEYS:
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a raw string map.

    Blank lines and lines starting with ``#`` are skipped.  Duplicate keys
    and lines without ``=`` are errors.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def build_config(raw):
    """Coerce a raw string map against SCHEMA into a PipelineConfig."""
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        else:
            values[key] = default
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return PipelineConfig(**values)


def load_config(path=None, overrides=None):
    """Read a config file (optional) and apply override pairs on top."""
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = parse_config_text(fh.read(), source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        raw[key] = value
    return build_config(raw)
