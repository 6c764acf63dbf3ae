"""Run configuration: an INI file with typed keys, overridable from the command line."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .bart import BartConfig
from .data import ColumnSchema
from .forest import ForestConfig
from .interpret import OutlierRule
from .overlap import CovariatePolicy
from .synth import ShiftSpec
from .weights import ClipRule


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


# section -> key -> (parser, default); defaults are strings so they hash like user input
SPEC: dict[str, dict[str, tuple]] = {
    "run": {"seed": (int, "0")},
    "data": {
        "path": (str, ""),
        "source": (str, ""),
        "target": (str, ""),
        "outcome": (str, "y"),
        "membership": (str, "S"),
        "id": (str, "row_id"),
        "impute": (str, "mean_mode"),
    },
    "simulate": {
        "n_source": (int, "500"),
        "n_target": (int, "500"),
        "p": (int, "5"),
        "shift": (_floats, "0"),
        "truth": (str, "friedman"),
        "beta": (_floats, ""),
        "intercept": (float, "0"),
        "constant": (float, "0"),
        "noise_sd": (float, "1"),
        "seed": (int, "0"),
    },
    "overlap": {
        "covariates": (CovariatePolicy.parse, "all"),
        "floor": (float, "0.01"),
        "tol": (float, "1e-8"),
        "max_iter": (int, "100"),
        "separation_bound": (float, "30"),
    },
    "weights": {"clip": (ClipRule.parse, "quantile:0.99"), "mode": (str, "weighted")},
    "bart": {
        "n_trees": (int, "200"),
        "eta": (float, "2"),
        "beta": (float, "0.95"),
        "nu": (float, "3"),
        "sigma_quantile": (float, "0.9"),
        "k_scale": (float, "2"),
        "n_burn": (int, "1000"),
        "n_keep": (int, "1000"),
        "thin": (int, "1"),
        "level": (float, "0.95"),
    },
    "forest": {"n_trees": (int, "500"), "mtry": (_opt_int, "auto"), "min_leaf": (int, "5")},
    "eval": {
        "k": (int, "10"),
        "mode": (str, "transport"),
        "settings": (lambda s: tuple(t.strip() for t in s.split(",") if t.strip()), "unweighted,weighted,target_trained"),
    },
    "outliers": {"K": (float, "2"), "side": (str, "lower"), "mad_scale": (float, "1.4826")},
    "ctree": {
        "alpha": (float, "0.05"),
        "min_node": (int, "20"),
        "max_depth": (int, "5"),
        "label": (str, "sd"),
    },
    "output": {"dir": (str, "out")},
}

# schema entries: "numeric", "categorical:a,b,c" or "ordered:lo,mid,hi"
SCHEMA_SECTION = "schema"


def parse_column(name: str, text: str) -> ColumnSchema:
    kind, _, cats = text.strip().partition(":")
    kind = kind.strip()
    if kind == "numeric":
        return ColumnSchema(name)
    if kind in ("categorical", "ordered"):
        return ColumnSchema(name, "categorical", tuple(c.strip() for c in cats.split(",")), kind == "ordered")
    raise ConfigError(f"[schema] {name}: expected numeric, categorical:... or ordered:..., got {text!r}")


@dataclass
class RunConfig:
    raw: dict[str, dict[str, str]]  # resolved string values, every key present
    base_dir: Path

    def get(self, section: str, key: str):
        parser, _ = SPEC[section][key]
        text = self.raw[section][key]
        try:
            return parser(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from None

    # ---- typed views

    @property
    def seed(self) -> int:
        return self.get("run", "seed")

    def path(self, key: str) -> Path | None:
        text = self.raw["data"][key]
        return (self.base_dir / text) if text else None

    @property
    def output_dir(self) -> Path:
        return self.base_dir / self.raw["output"]["dir"]

    def schema(self) -> tuple[ColumnSchema, ...] | None:
        """Declared covariate schema, or ``None`` to infer numeric columns."""
        entries = self.raw.get(SCHEMA_SECTION, {})
        if not entries:
            return None
        return tuple(parse_column(k, v) for k, v in entries.items())

    def shift_spec(self) -> ShiftSpec:
        g = lambda k: self.get("simulate", k)  # noqa: E731
        beta = g("beta")
        try:
            return ShiftSpec(
                n_source=g("n_source"),
                n_target=g("n_target"),
                p=g("p"),
                shift=g("shift") if len(g("shift")) != 1 else g("shift")[0],
                truth=g("truth"),
                beta=beta or None,
                intercept=g("intercept"),
                constant=g("constant"),
                noise_sd=g("noise_sd"),
                seed=g("seed"),
            )
        except ValueError as exc:
            raise ConfigError(f"[simulate] {exc}") from None

    def bart_config(self) -> BartConfig:
        keys = ("n_trees", "eta", "beta", "nu", "sigma_quantile", "k_scale", "n_burn", "n_keep", "thin")
        try:
            return BartConfig(**{k: self.get("bart", k) for k in keys})
        except ValueError as exc:
            raise ConfigError(f"[bart] {exc}") from None

    def forest_config(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.get("forest", "n_trees"),
            mtry=self.get("forest", "mtry"),
            min_leaf=self.get("forest", "min_leaf"),
            seed=self.seed,
        )

    def outlier_rule(self, kind: str) -> OutlierRule:
        try:
            return OutlierRule(
                kind, self.get("outliers", "K"), self.get("outliers", "side"), self.get("outliers", "mad_scale")
            )
        except ValueError as exc:
            raise ConfigError(f"[outliers] {exc}") from None

    def logistic_opts(self) -> dict:
        return {k: self.get("overlap", k) for k in ("tol", "max_iter", "separation_bound")}

    def hash(self) -> str:
        """SHA-256 (first 16 hex digits) of the canonical config, output directory excluded."""
        canon = {s: kv for s, kv in self.raw.items() if s not in ("output", SCHEMA_SECTION)}
        canon[SCHEMA_SECTION] = list(self.raw.get(SCHEMA_SECTION, {}).items())  # column order matters
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _apply(raw: dict, section: str, key: str, value: str, origin: str) -> None:
    if section == SCHEMA_SECTION:
        raw.setdefault(SCHEMA_SECTION, {})[key] = value
        return
    if section not in SPEC:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    if key not in SPEC[section]:
        raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]")
    raw[section][key] = value.strip()


def load_config(path=None, overrides: list[str] = ()) -> RunConfig:
    """Read ``path`` (optional) and apply ``section.key=value`` overrides."""
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SPEC.items()}
    base = Path(".")
    if path is not None:
        path = Path(path)
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str  # keep column names case-sensitive
        try:
            with path.open(encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in cp.sections():
            for key, value in cp.items(section):
                _apply(raw, section, key, value, str(path))
        base = path.parent
    for item in overrides:
        lhs, eq, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not eq or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        _apply(raw, section, key, value, "--set")
    cfg = RunConfig(raw, base)
    for section, keys in SPEC.items():  # validate every value eagerly
        for key in keys:
            cfg.get(section, key)
    cfg.schema()
    cfg.bart_config()
    cfg.outlier_rule("sd")
    choices = {("weights", "mode"): ("weighted", "unweighted", "unit"), ("eval", "mode"): ("transport", "models"),
               ("ctree", "label"): ("sd", "mad"), ("data", "impute"): ("mean_mode",)}
    for (section, key), allowed in choices.items():
        if cfg.raw[section][key] not in allowed:
            raise ConfigError(f"[{section}] {key} must be one of {', '.join(allowed)}, got {cfg.raw[section][key]!r}")
    return cfg
