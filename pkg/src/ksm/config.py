"""Run configuration: one JSON file fully determines an experiment.

Top-level sections are ``dataset``, ``kernel``, ``model``, ``training``,
``compare`` and ``analyze`` plus an integer ``seed``. Unknown keys anywhere
are rejected so that typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import (
    Phase,
    TrainConfig,
    export_bundled_mnist,
    load_csv_dataset,
    load_idx_images,
    make_half_moons,
    stratified_split,
)
from .errors import ConfigError
from .kernels import GaussianKernel, Kernel, kernel_from_config
from .training import HALF_MOONS_PHASES, MNIST_PHASES

METHODS = ("hebbian", "nystrom_uniform", "nystrom_kmeans", "nystrom_learned", "rff", "kernel_pca")
TASKS = ("spectrum", "histogram", "rfields", "cluster", "classify", "pca")
SCHEDULES = {"half_moons": HALF_MOONS_PHASES, "mnist": MNIST_PHASES}

_TOP_KEYS = {"seed", "dataset", "kernel", "model", "training", "compare", "analyze"}
_DATASET_KEYS = {
    "half_moons": {"name", "count", "noise_std", "seed"},
    "idx": {"name", "images", "labels", "test_images", "test_labels", "crop", "subsample", "subsample_seed"},
    "bundled_mnist": {"name", "crop", "subsample", "subsample_seed"},
    "csv": {"name", "path"},
}
_MODEL_KEYS = {"n", "lambda"}
_TRAINING_KEYS = {"batch_size", "phases", "schedule", "q_floor", "log_every", "homogeneous"}
_PHASE_KEYS = {"iterations", "eta_w", "eta_q", "eta_l"}
_COMPARE_KEYS = {"dims", "methods", "seeds"}
_ANALYZE_KEYS = {"tasks", "bins", "k", "n_init", "labels_per_class", "weight_decays", "classifier_seeds"}


def _reject_unknown(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError("must be a JSON object", field=where)
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field=where)


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunConfig:
    raw: dict
    seed: int
    kernel: Kernel
    hash: str
    base_dir: str = "."

    # -- dataset -----------------------------------------------------------
    def datasets(self):
        """Return ``(train, holdout)``; holdout is None when there is none."""
        spec = self.raw["dataset"]
        name = spec["name"]
        if name == "half_moons":
            d = make_half_moons(spec.get("count", 1600), spec.get("noise_std", 0.1), spec.get("seed", self.seed))
            return d, None
        if name == "csv":
            return load_csv_dataset(self._path(spec["path"])), None
        crop = spec.get("crop", 4)
        if name == "bundled_mnist":
            cache = os.path.join(os.environ.get("KSM_DATA", os.path.join(os.path.expanduser("~"), ".cache", "ksm")))
            images, labels = export_bundled_mnist(cache)
            full = load_idx_images(images, labels, crop=crop)
            test = None
        else:
            full = load_idx_images(self._path(spec["images"]), self._opt_path(spec.get("labels")), crop=crop)
            test = None
            if spec.get("test_images"):
                test = load_idx_images(self._path(spec["test_images"]), self._opt_path(spec.get("test_labels")), crop=crop, name="mnist_test")
        sub = spec.get("subsample", 2000)
        if sub is None or sub >= full.T:
            return full, test
        seed = spec.get("subsample_seed", 0)
        if full.labels is not None:
            first, rest = stratified_split(full.labels, sub, seed)
        else:
            perm = np.random.default_rng(seed).permutation(full.T)
            first, rest = np.sort(perm[:sub]), np.sort(perm[sub:])
        train = full.subset(first, name=f"{full.name}_{sub}")
        return train, test if test is not None else full.subset(rest, name=f"{full.name}_holdout")

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def _opt_path(self, p):
        return None if p is None else self._path(p)

    # -- model / training ----------------------------------------------------
    @property
    def n_neurons(self):
        return self._section("model")["n"]

    @property
    def lam(self):
        return self.raw.get("model", {}).get("lambda", 0.001)

    @property
    def homogeneous(self):
        return bool(self.raw.get("training", {}).get("homogeneous", False))

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        spec = self._section("training")
        if "phases" in spec:
            phases = [Phase(**p) for p in spec["phases"]]
        else:
            phases = SCHEDULES[spec.get("schedule", "half_moons")]
        return TrainConfig(
            phases,
            batch_size=spec.get("batch_size", 64),
            lam=self.lam,
            seed=self.seed if seed is None else seed,
            q_floor=spec.get("q_floor", 1e-4),
            log_every=spec.get("log_every", 100),
        )

    def _section(self, name):
        if name not in self.raw:
            raise ConfigError("section is required for this command", field=name)
        return self.raw[name]

    # -- compare / analyze ---------------------------------------------------
    @property
    def compare(self):
        spec = self._section("compare")
        return spec["dims"], spec["methods"], spec.get("seeds", [self.seed])

    @property
    def analyze(self):
        return dict(self.raw.get("analyze", {}))


def _validate(raw):
    _reject_unknown(raw, _TOP_KEYS, "config")
    for required in ("dataset", "kernel"):
        if required not in raw:
            raise ConfigError("section is required", field=required)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", field="seed")

    ds = raw["dataset"]
    if not isinstance(ds, dict) or ds.get("name") not in _DATASET_KEYS:
        raise ConfigError(f"'name' must be one of {sorted(_DATASET_KEYS)}", field="dataset.name")
    _reject_unknown(ds, _DATASET_KEYS[ds["name"]], "dataset")
    if ds["name"] == "idx" and "images" not in ds:
        raise ConfigError("missing key 'images'", field="dataset.images")
    if ds["name"] == "csv" and "path" not in ds:
        raise ConfigError("missing key 'path'", field="dataset.path")
    if "crop" in ds and (not isinstance(ds["crop"], int) or ds["crop"] < 0):
        raise ConfigError("must be a non-negative integer", field="dataset.crop")

    kernel = kernel_from_config(raw["kernel"])

    if "model" in raw:
        _reject_unknown(raw["model"], _MODEL_KEYS, "model")
        n = raw["model"].get("n")
        if not isinstance(n, int) or n < 1:
            raise ConfigError("must be a positive integer", field="model.n")
        lam = raw["model"].get("lambda", 0.001)
        if not isinstance(lam, (int, float)) or lam < 0:
            raise ConfigError("must be a non-negative number", field="model.lambda")

    if "training" in raw:
        tr = raw["training"]
        _reject_unknown(tr, _TRAINING_KEYS, "training")
        if "phases" in tr and "schedule" in tr:
            raise ConfigError("give either 'phases' or 'schedule', not both", field="training")
        if "schedule" in tr and tr["schedule"] not in SCHEDULES:
            raise ConfigError(f"must be one of {sorted(SCHEDULES)}", field="training.schedule")
        for i, p in enumerate(tr.get("phases", [])):
            _reject_unknown(p, _PHASE_KEYS, f"training.phases[{i}]")
            missing = sorted(_PHASE_KEYS - set(p))
            if missing:
                raise ConfigError(f"missing key(s) {missing}", field=f"training.phases[{i}]")
        if tr.get("homogeneous") and kernel.homogeneity is None:
            raise ConfigError("homogeneous training needs a homogeneous kernel", field="training.homogeneous")

    if "compare" in raw:
        cp = raw["compare"]
        _reject_unknown(cp, _COMPARE_KEYS, "compare")
        for key in ("dims", "methods"):
            if key not in cp or not isinstance(cp[key], list) or not cp[key]:
                raise ConfigError("must be a non-empty list", field=f"compare.{key}")
        bad = sorted(set(cp["methods"]) - set(METHODS))
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; expected a subset of {list(METHODS)}", field="compare.methods")
        if "rff" in cp["methods"] and not isinstance(kernel, GaussianKernel):
            raise ConfigError(
                "random Fourier features only approximate the Gaussian kernel", field="compare.methods"
            )
        if any(not isinstance(d, int) or d < 1 for d in cp["dims"]):
            raise ConfigError("dimensions must be positive integers", field="compare.dims")

    if "analyze" in raw:
        an = raw["analyze"]
        _reject_unknown(an, _ANALYZE_KEYS, "analyze")
        bad = sorted(set(an.get("tasks", [])) - set(TASKS))
        if bad:
            raise ConfigError(f"unknown task(s) {bad}; expected a subset of {list(TASKS)}", field="analyze.tasks")
    return kernel


def parse_config(raw: dict, seed: Optional[int] = None, base_dir=".") -> RunConfig:
    raw = json.loads(json.dumps(raw))  # detached deep copy
    if seed is not None:
        raw["seed"] = seed
    if isinstance(raw, dict):
        raw.setdefault("seed", 0)
    kernel = _validate(raw)
    if "training" in raw:
        # surface schedule/phase errors (two-timescale rule etc.) at load time
        RunConfig(raw, raw.get("seed", 0), kernel, "", base_dir).train_config()
    return RunConfig(raw, raw.get("seed", 0), kernel, config_hash(raw), base_dir)


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", field=os.path.basename(path)) from exc
    return parse_config(raw, seed, base_dir=os.path.dirname(os.path.abspath(path)))
