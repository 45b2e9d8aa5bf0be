"""End-to-end orchestration: data, training, inference, filtering, reports.

A pipeline run is a pure function of its configuration: given the same
config, seed, and weights it emits a byte-identical output tree, manifest
included.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import evalnet, matchnet, metrics
from .errors import ConfigError, UndefinedMetricError
from .imageio import INVALID, DisparityMap, StereoPairRecord, load_dataset, write_pfm
from .synth import SyntheticSceneSpec, gen_synthetic
from .tensornet import TrainConfig, init_params, load_params, save_params, sgd_train
from .tensornet.network import NetworkParams, predict_scores
from .transforms import TransformConfig, build_stack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset shape shared by all generated scenes."""

    width: int = 128
    height: int = 128
    ndisp: int = 16
    texture_density: float = 1.0
    train_scenes: int = 10
    eval_scenes: int = 2
    # held-out scenes exercise the hard cases: flat regions + lighting gain
    eval_textureless_fraction: float = 0.15
    eval_lighting_gain: float = 1.2


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; all referenced paths must exist at start."""

    out_dir: str = "out"
    dataset_root: Optional[str] = None
    resolution: str = "half"
    synth: SynthConfig = field(default_factory=SynthConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)
    matcher_train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=16, seed=7))
    evaluator_train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=16, seed=8))
    t_e: float = 1.0
    r_threshold: float = 0.9
    match_per_class: int = 2000
    eval_max_per_class: Optional[int] = 1000
    seed: int = 0
    train: bool = True
    matcher_weights: Optional[str] = None
    evaluator_weights: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.r_threshold <= 1.0:
            raise ConfigError("r_threshold must lie in [0, 1]")
        if self.t_e <= 0:
            raise ConfigError("t_e must be positive")
        for p in (self.dataset_root, self.matcher_weights, self.evaluator_weights):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"referenced path does not exist: {p}")


def synthetic_records(cfg: PipelineConfig):
    """Deterministic train/eval scene lists derived from the pipeline seed."""
    sc = cfg.synth
    rng = np.random.default_rng(cfg.seed)
    gains = [1.0, 1.1, 1.2, 1.0, 1.15]
    tless = [0.0, 0.1, 0.0, 0.15, 0.12]
    train = []
    for i in range(sc.train_scenes):
        train.append(
            gen_synthetic(
                SyntheticSceneSpec(
                    width=sc.width,
                    height=sc.height,
                    ndisp=sc.ndisp,
                    texture_density=sc.texture_density,
                    textureless_fraction=tless[i % len(tless)],
                    lighting_gain=gains[i % len(gains)],
                    seed=int(rng.integers(0, 2**31)),
                )
            )
        )
    evals = []
    for _ in range(sc.eval_scenes):
        evals.append(
            gen_synthetic(
                SyntheticSceneSpec(
                    width=sc.width,
                    height=sc.height,
                    ndisp=sc.ndisp,
                    texture_density=sc.texture_density,
                    textureless_fraction=sc.eval_textureless_fraction,
                    lighting_gain=sc.eval_lighting_gain,
                    seed=int(rng.integers(0, 2**31)),
                )
            )
        )
    return train, evals


def _stack_pair(record: StereoPairRecord, cfg: TransformConfig, cache: dict):
    if record.name not in cache:
        cache[record.name] = (
            build_stack(record.left, cfg).channels,
            build_stack(record.right, cfg).channels,
        )
    return cache[record.name]


def train_matcher(cfg: PipelineConfig, records, stacks: dict):
    """Sample balanced patches and fit the matching network."""
    sample_seed = int(np.random.default_rng(cfg.seed).integers(0, 2**31)) + 1
    samples = matchnet.sample_matching_patches(
        records, cfg.transform, cfg.match_per_class, rng=sample_seed, stacks=stacks
    )
    params = init_params(
        matchnet.matching_net_spec(), matchnet.INPUT_SHAPE, seed=cfg.matcher_train.seed
    )
    return sgd_train(params, samples.samples, samples.labels, cfg.matcher_train)


def train_evaluator(cfg: PipelineConfig, records, raw_maps, stacks: dict):
    """Label raw maps against ground truth and fit the evaluation network."""
    sample_seed = int(np.random.default_rng(cfg.seed).integers(0, 2**31)) + 2
    pairs = [(r, raw_maps[r.name]) for r in records if r.gt is not None]
    samples = evalnet.sample_eval_patches(
        pairs, cfg.t_e, rng=sample_seed, max_per_class=cfg.eval_max_per_class
    )
    params = init_params(
        evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE, seed=cfg.evaluator_train.seed
    )
    return sgd_train(params, samples.samples, samples.labels, cfg.evaluator_train)


def infer_raw(record: StereoPairRecord, cfg: PipelineConfig, params, stacks: dict):
    pair = _stack_pair(record, cfg.transform, stacks)
    volume = matchnet.infer_cost_volume(
        record.left, record.right, record.calib, cfg.transform, params, stacks=pair
    )
    return matchnet.wta(volume)


def _confidence_pfm(conf: evalnet.ConfidenceMap) -> bytes:
    values = np.where(conf.valid, conf.values, INVALID)
    return write_pfm(DisparityMap(values))


def _config_dict(cfg: PipelineConfig) -> dict:
    # weight identity is recorded as fingerprints; drop machine-local paths
    # so reruns into different directories stay byte-identical
    out = asdict(cfg)
    for key in ("out_dir", "matcher_weights", "evaluator_weights"):
        out.pop(key, None)
    return out


def _config_hash(cfg: PipelineConfig) -> str:
    canon = json.dumps(_config_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def run_pipeline(cfg: PipelineConfig):
    """Execute the full pipeline and emit artifacts under ``cfg.out_dir``.

    Stages per evaluated scene: channel stacks, cost volume, WTA raw map,
    confidence map, filtered map at the configured threshold, metrics.
    Returns (list of EvalReport, manifest dict).
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stacks: dict = {}

    if cfg.dataset_root is not None:
        records = load_dataset(cfg.dataset_root, cfg.resolution)
        train_records = [r for r in records if r.gt is not None]
        eval_records = records
    else:
        train_records, eval_records = synthetic_records(cfg)

    emitted: dict[str, bytes] = {}

    # matching network
    if cfg.matcher_weights is not None:
        matcher = load_params(Path(cfg.matcher_weights).read_bytes())
        matchnet._check_matcher(matcher)
    elif cfg.train:
        matcher, matcher_losses = train_matcher(cfg, train_records, stacks)
        emitted["matcher_losses.csv"] = _loss_csv(matcher_losses)
    else:
        raise ConfigError("no matcher weights given and training is disabled")
    emitted["matcher.ssnw"] = save_params(matcher)

    # raw maps for evaluator training
    if cfg.evaluator_weights is not None:
        evaluator = load_params(Path(cfg.evaluator_weights).read_bytes())
        evalnet._check_evaluator(evaluator)
    elif cfg.train:
        raw_maps = {r.name: infer_raw(r, cfg, matcher, stacks) for r in train_records}
        evaluator, evaluator_losses = train_evaluator(cfg, train_records, raw_maps, stacks)
        emitted["evaluator_losses.csv"] = _loss_csv(evaluator_losses)
    else:
        raise ConfigError("no evaluator weights given and training is disabled")
    emitted["evaluator.ssnw"] = save_params(evaluator)

    reports = []
    for record in eval_records:
        raw = infer_raw(record, cfg, matcher, stacks)
        conf = evalnet.confidence_map(record.left, raw, evaluator)
        filtered = evalnet.filter_disparity(raw, conf, cfg.r_threshold)
        prefix = f"{record.name}/"
        emitted[prefix + "raw.pfm"] = write_pfm(raw)
        emitted[prefix + "conf.pfm"] = _confidence_pfm(conf)
        emitted[prefix + "filtered.pfm"] = write_pfm(filtered)
        if record.gt is not None:
            mask = record.nonocc_mask
            auc = None
            try:
                bad = np.zeros(raw.data.shape, dtype=bool)
                both = raw.valid_mask() & record.gt.valid_mask()
                bad[both] = np.abs(raw.data[both] - record.gt.data[both]) > cfg.t_e
                auc = metrics.sparsification_auc(conf, bad, mask).auc
            except Exception as exc:  # pragma: no cover - degenerate scenes
                log.warning("scene %s: no sparsification AUC (%s)", record.name, exc)
            try:
                reports.append(
                    metrics.scene_report(record.name, filtered, record.gt, mask, auc=auc)
                )
            except UndefinedMetricError as exc:
                log.warning("scene %s: metrics undefined (%s)", record.name, exc)
            if conf.valid.any():
                curve = metrics.error_vs_invalid_curve(raw, conf, record.gt, mask)
                emitted[prefix + "curve.csv"] = metrics.curve_csv(curve).encode("ascii")
                emitted[prefix + "curve.svg"] = metrics.curve_svg(curve).encode("ascii")
    if reports:
        emitted["report.csv"] = metrics.reports_csv(reports).encode("ascii")

    for rel, data in emitted.items():
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)

    manifest = {
        "config": _config_dict(cfg),
        "config_hash": _config_hash(cfg),
        "weights": {
            "matcher": matcher.fingerprint,
            "evaluator": evaluator.fingerprint,
        },
        "files": {rel: hashlib.sha256(data).hexdigest() for rel, data in sorted(emitted.items())},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return reports, manifest


def _loss_csv(losses) -> bytes:
    rows = ["epoch,loss"] + [f"{i},{l:.8f}" for i, l in enumerate(losses)]
    return ("\n".join(rows) + "\n").encode("ascii")


def held_out_accuracy(params: NetworkParams, samples, labels) -> float:
    """Fraction of samples whose thresholded score matches the label."""
    s = predict_scores(params, samples.astype(np.float32))
    return float(np.mean((s > 0.5) == (labels == 1)))
