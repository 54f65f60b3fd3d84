"""JSON run configuration: loading, validation with field paths, CLI overrides."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .core import LabelSet, MeanFieldConfig
from .potentials import KernelSpec, PnPottsParams
from .superpixels import MeanShiftParams

SECTIONS = ("kernels", "pn_potts", "cooccurrence", "inference", "labels")
KERNEL_KEYS = ("kind", "weight", "spatial", "color", "temporal")
MEANSHIFT_KEYS = ("spatial_bandwidth", "range_bandwidth", "min_region_size", "max_iterations", "convergence_eps")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CooccurrenceSource:
    weight: float = 1.0
    matrix: Optional[Path] = None
    estimate_from: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    kernels: tuple = ()
    pn: Optional[PnPottsParams] = None
    # one entry per Pn layer: MeanShiftParams or a path to precomputed LMAP region maps
    layers: tuple = ()
    cooccurrence: Optional[CooccurrenceSource] = None
    inference: MeanFieldConfig = field(default_factory=MeanFieldConfig)
    labels: Optional[LabelSet] = None


def _check_keys(obj, path: str, allowed, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{path}.{key}: required key missing" if path else f"{key}: required key missing")


def _number(value, path: str, minimum=None, strict=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path}: expected a finite number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{path}: must be {op} {minimum}, got {value!r}")
    return int(value) if integer else float(value)


def _path(value, where: str, base: Path) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where}: expected a file path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _kernels(raw, base) -> tuple:
    if not isinstance(raw, list):
        raise ConfigError("kernels: expected a list")
    specs = []
    for k, item in enumerate(raw):
        where = f"kernels[{k}]"
        _check_keys(item, where, KERNEL_KEYS, ("kind", "weight"))
        kw = {"kind": item["kind"], "weight": _number(item["weight"], f"{where}.weight", 0.0)}
        for name in ("spatial", "color", "temporal"):
            if item.get(name) is not None:
                kw[name] = _number(item[name], f"{where}.{name}", 0.0, strict=True)
        try:
            specs.append(KernelSpec(**kw))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return tuple(specs)


def _meanshift(raw, where) -> MeanShiftParams:
    _check_keys(raw, where, MEANSHIFT_KEYS, ("spatial_bandwidth", "range_bandwidth"))
    kw = {}
    for name in MEANSHIFT_KEYS:
        if name in raw:
            integer = name in ("min_region_size", "max_iterations")
            kw[name] = _number(raw[name], f"{where}.{name}", 0, strict=True, integer=integer)
    return MeanShiftParams(**kw)


def _pn_potts(raw, base):
    if raw is None:
        return None, ()
    _check_keys(raw, "pn_potts", ("enabled", "gamma_low", "layers"), ("layers",))
    if not raw.get("enabled", True):
        return None, ()
    gamma_low = _number(raw.get("gamma_low", 0.0), "pn_potts.gamma_low", 0.0)
    if not isinstance(raw["layers"], list) or not raw["layers"]:
        raise ConfigError("pn_potts.layers: expected a non-empty list")
    gammas, layers = [], []
    for m, layer in enumerate(raw["layers"]):
        where = f"pn_potts.layers[{m}]"
        _check_keys(layer, where, ("gamma_max", "meanshift", "region_maps"), ("gamma_max",))
        g = _number(layer["gamma_max"], f"{where}.gamma_max", 0.0)
        if g <= gamma_low:
            raise ConfigError(f"{where}.gamma_max: must exceed gamma_low = {gamma_low}, got {g}")
        gammas.append(g)
        if ("meanshift" in layer) == ("region_maps" in layer):
            raise ConfigError(f"{where}: give exactly one of meanshift, region_maps")
        if "meanshift" in layer:
            layers.append(_meanshift(layer["meanshift"], f"{where}.meanshift"))
        else:
            layers.append(_path(layer["region_maps"], f"{where}.region_maps", base))
    return PnPottsParams(tuple(gammas), gamma_low), tuple(layers)


def _cooccurrence(raw, base):
    if raw is None:
        return None
    _check_keys(raw, "cooccurrence", ("enabled", "weight", "matrix", "estimate_from"))
    if not raw.get("enabled", True):
        return None
    weight = _number(raw.get("weight", 1.0), "cooccurrence.weight", 0.0)
    if ("matrix" in raw) == ("estimate_from" in raw):
        raise ConfigError("cooccurrence: give exactly one of matrix, estimate_from")
    if "matrix" in raw:
        return CooccurrenceSource(weight, matrix=_path(raw["matrix"], "cooccurrence.matrix", base))
    sources = raw["estimate_from"]
    if isinstance(sources, str):
        sources = [sources]
    if not isinstance(sources, list) or not sources:
        raise ConfigError("cooccurrence.estimate_from: expected a path or a non-empty list of paths")
    paths = tuple(_path(s, f"cooccurrence.estimate_from[{i}]", base) for i, s in enumerate(sources))
    return CooccurrenceSource(weight, estimate_from=paths)


def _inference(raw) -> MeanFieldConfig:
    if raw is None:
        return MeanFieldConfig()
    _check_keys(raw, "inference", ("iterations", "batch_size", "q_floor", "convergence_tol"))
    kw = {}
    if "iterations" in raw:
        kw["iterations"] = _number(raw["iterations"], "inference.iterations", 1, integer=True)
    if "batch_size" in raw:
        kw["batch_size"] = _number(raw["batch_size"], "inference.batch_size", 1, integer=True)
    if "q_floor" in raw:
        q = _number(raw["q_floor"], "inference.q_floor", 0.0, strict=True)
        if q >= 1e-3:
            raise ConfigError(f"inference.q_floor: must be < 1e-3, got {q}")
        kw["q_floor"] = q
    if raw.get("convergence_tol") is not None:
        kw["convergence_tol"] = _number(raw["convergence_tol"], "inference.convergence_tol", 0.0, strict=True)
    return MeanFieldConfig(**kw)


def _labels(raw) -> Optional[LabelSet]:
    if raw is None:
        return None
    _check_keys(raw, "labels", ("names", "palette", "ignore_label"), ("names", "palette"))
    names, palette = raw["names"], raw["palette"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ConfigError("labels.names: expected a list of strings")
    if not isinstance(palette, list):
        raise ConfigError("labels.palette: expected a list of RGB triples")
    for i, rgb in enumerate(palette):
        if not isinstance(rgb, list) or len(rgb) != 3:
            raise ConfigError(f"labels.palette[{i}]: expected an RGB triple")
        for c, v in enumerate(rgb):
            _number(v, f"labels.palette[{i}][{c}]", 0, integer=True)
    ignore = raw.get("ignore_label")
    if ignore is not None:
        ignore = _number(ignore, "labels.ignore_label", 0, integer=True)
    try:
        return LabelSet(tuple(names), tuple(tuple(p) for p in palette), ignore)
    except ValueError as exc:
        raise ConfigError(f"labels: {exc}") from None


def parse_config(doc: dict, base: Union[str, Path] = ".") -> RunConfig:
    """Validate a decoded JSON document; relative paths resolve against ``base``."""
    base = Path(base)
    _check_keys(doc, "", SECTIONS)
    pn, layers = _pn_potts(doc.get("pn_potts"), base)
    return RunConfig(
        kernels=_kernels(doc.get("kernels", []), base),
        pn=pn,
        layers=layers,
        cooccurrence=_cooccurrence(doc.get("cooccurrence"), base),
        inference=_inference(doc.get("inference")),
        labels=_labels(doc.get("labels")),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc, path.parent)


def default_config_text() -> str:
    return resources.files("colabel").joinpath("data/default_config.json").read_text()


def default_config() -> RunConfig:
    return parse_config(json.loads(default_config_text()))


def apply_overrides(cfg: RunConfig, frame_level: bool = False, **inference) -> RunConfig:
    """Command-line values win over the file; ``frame_level`` forces batch_size 1."""
    kw = {k: v for k, v in inference.items() if v is not None}
    if frame_level:
        kw["batch_size"] = 1
    if not kw:
        return cfg
    try:
        return replace(cfg, inference=replace(cfg.inference, **kw))
    except ValueError as exc:
        raise ConfigError(f"inference: {exc}") from None
