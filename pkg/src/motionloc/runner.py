"""Experiment orchestration: config plumbing, training, evaluation, ablation.

A full experiment is one JSON-serializable config tree: corpus spec,
graph/model/loss settings, optimizer schedule, inference thresholds.
Training iterates shuffled mini-batches, accumulates per-video gradients,
and takes one Adam step per batch. The ablation driver reruns the
pipeline over named config deltas and writes one CSV per table, caching
cells whose resolved configs coincide.
"""

import dataclasses
import json
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .datagen import CorpusSpec, generate_corpus
from .localization import InferenceConfig, localize_video
from .metrics import kl_guidance, map_at
from .motiongraph import GraphConfig, build_graph
from .network import (ModelConfig, full_forward, guidance_features,
                      init_params, save_params)
from .objective import LossConfig, per_video_loss

OUT_ROOT_ENV = "MOTIONLOC_OUT_ROOT"


class ConfigError(ValueError):
    """A config file or override does not fit the schema."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or similar)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec = CorpusSpec()
    graph: GraphConfig = GraphConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    eval_iou: tuple = (0.3, 0.4, 0.5, 0.6, 0.7)
    out_dir: str = "runs/default"

    def validate(self):
        self.corpus.validate()
        self.graph.validate()
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        self.inference.validate()
        ious = list(self.eval_iou)
        if not ious or any(not 0.0 < t <= 1.0 for t in ious):
            raise ValueError("eval_iou must be non-empty with values in (0,1]")


_SECTIONS = {
    "corpus": CorpusSpec, "graph": GraphConfig, "model": ModelConfig,
    "loss": LossConfig, "train": TrainConfig, "inference": InferenceConfig,
}
_TUPLE_FIELDS = {"theta_a_list", "eval_iou"}


def _merge_section(cls, current, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {name: getattr(current, name) for name in names}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data, base=None):
    """ExperimentConfig from a (possibly partial) nested dict of overrides."""
    cfg = base if base is not None else ExperimentConfig()
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = set(_SECTIONS) | {"eval_iou", "out_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        if name in data:
            section = _merge_section(cls, section, data[name], name)
        kwargs[name] = section
    kwargs["eval_iou"] = tuple(data.get("eval_iou", cfg.eval_iou))
    kwargs["out_dir"] = data.get("out_dir", cfg.out_dir)
    merged = ExperimentConfig(**kwargs)
    try:
        merged.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return merged


def config_to_dict(cfg):
    out = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        out[name] = section
    out["eval_iou"] = list(cfg.eval_iou)
    out["out_dir"] = cfg.out_dir
    return out


def load_config(path, base=None):
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return config_from_dict(data, base=base)


def resolve_out(path):
    """Output path, optionally re-rooted by the MOTIONLOC_OUT_ROOT env var."""
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def run_training(cfg, train_videos, log=None):
    """Optimize fresh parameters on the given videos; returns (params, curve).

    The curve holds one (epoch, mean per-video loss) pair per epoch.
    Graphs are built once per video up front; gradients accumulate over
    each shuffled mini-batch before a single Adam step.
    """
    mcfg = cfg.model
    params = init_params(cfg.corpus.d, cfg.corpus.C, mcfg, cfg.train.seed)
    graphs = [build_graph(guidance_features(v, mcfg), params.W1, params.W2,
                          cfg.graph) for v in train_videos]
    trainable = params.trainable()
    state = nc.adam_init(trainable, lr=cfg.train.lr)
    shuffle = nc.split_rng(cfg.train.seed, 100)
    curve = []
    for epoch in range(cfg.train.epochs):
        order = shuffle.permutation(len(train_videos))
        epoch_losses = []
        for batch in _batches(order, cfg.train.batch_size):
            nc.zero_grads(trainable)
            for i in batch:
                video = train_videos[int(i)]
                out = full_forward(video, graphs[int(i)], params, mcfg,
                                   mode=cfg.graph.mode)
                loss, _ = per_video_loss(out, video.label, cfg.loss)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} on video {video.id}")
                nc.backward(loss)
                epoch_losses.append(value)
            grads = [p.grad / len(batch) for p in trainable]
            nc.adam_step(trainable, grads, state)
        curve.append((epoch, float(np.mean(epoch_losses))))
        if log and (epoch + 1) % 25 == 0:
            log(f"epoch {epoch + 1}/{cfg.train.epochs} "
                f"loss {curve[-1][1]:.4f}")
    return params, curve


def run_evaluation(cfg, params, videos):
    """Inference + mAP + mean per-video KL for one parameter set."""
    mcfg = cfg.model
    dets_by_class = defaultdict(list)
    gt_by_class = defaultdict(lambda: defaultdict(list))
    kls = []
    for video in videos:
        graph = build_graph(guidance_features(video, mcfg), params.W1,
                            params.W2, cfg.graph)
        out = full_forward(video, graph, params, mcfg, mode=cfg.graph.mode)
        for prop in localize_video(out.tcas.value, cfg.loss.r, cfg.inference):
            dets_by_class[prop.cls].append((video.id, prop))
        kls.append(kl_guidance(out.motionness.value, video.gt_mask()))
        for s, e, c in video.gt_intervals:
            gt_by_class[c][video.id].append((s, e))
    gt = {c: dict(v) for c, v in gt_by_class.items()}
    report = map_at(dict(dets_by_class), gt, cfg.eval_iou)
    report.kl[mcfg.guidance_stream] = float(np.mean(kls))
    return report


def write_loss_curve(path, curve):
    lines = ["epoch,mean_loss"]
    lines += [f"{epoch},{value!r}" for epoch, value in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def train_experiment(cfg, log=None):
    """Generate the corpus, train, and write checkpoint + loss curve."""
    cfg.validate()
    out = resolve_out(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_videos, _ = generate_corpus(cfg.corpus)
    params, curve = run_training(cfg, train_videos, log=log)
    write_loss_curve(out / "loss_curve.csv", curve)
    save_params(out / "checkpoint", params)
    (out / "config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return params, curve, out


def evaluate_params(cfg, params, out=None):
    """Evaluate on the config's test split; optionally write report files."""
    _, test_videos = generate_corpus(cfg.corpus)
    report = run_evaluation(cfg, params, test_videos)
    if out is not None:
        out = resolve_out(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        report.write_csv(out / "report.csv")
    return report


# ---------------------------------------------------------------------------
# ablation matrices


def default_ablation_matrix():
    """The two comparison tables: loss variants and graph variants."""
    return {
        "tables": {
            "loss": [
                {"name": "motion_guided"},
                {"name": "appearance_guided",
                 "overrides": {"model": {"guidance_stream": "appearance"}}},
                {"name": "two_stream_guided",
                 "overrides": {"model": {"guidance_stream": "both"}}},
                {"name": "xe",
                 "overrides": {"loss": {"loss_kind": "xe"}}},
                {"name": "no_regularizer",
                 "overrides": {"loss": {"regularizer_mask": "none"}}},
            ],
            "graph": [
                {"name": "sparse_all_edges"},
                {"name": "dense",
                 "overrides": {"graph": {"mode": "dense"}}},
                {"name": "mlp",
                 "overrides": {"graph": {"mode": "mlp"}}},
                {"name": "no_positional",
                 "overrides": {"graph": {"use_positional": False}}},
                {"name": "no_semantic",
                 "overrides": {"graph": {"use_semantic": False}}},
            ],
        }
    }


ABLATION_IOUS = (0.3, 0.4, 0.5, 0.7)


def _cell_key(cfg):
    data = config_to_dict(cfg)
    data.pop("out_dir")
    return json.dumps(data, sort_keys=True)


def run_ablation(base_cfg, matrix, out_dir, log=None):
    """Train/evaluate every cell; one CSV per table; cells cached by config.

    A failing cell contributes an error row and the matrix continues.
    Returns {table: [row dict, ...]}.
    """
    out = resolve_out(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "tables" not in matrix or not isinstance(matrix["tables"], dict):
        raise ConfigError("ablation matrix needs a 'tables' object")
    base = config_from_dict(matrix.get("base", {}), base=base_cfg)
    cache = {}
    corpora = {}
    results = {}
    for tname, cells in matrix["tables"].items():
        rows = []
        for cell in cells:
            if "name" not in cell:
                raise ConfigError(f"cell in table {tname!r} lacks a name")
            name = cell["name"]
            row = {"name": name, "error": ""}
            try:
                cfg = config_from_dict(cell.get("overrides", {}), base=base)
                key = _cell_key(cfg)
                if key not in cache:
                    ckey = json.dumps(dataclasses.asdict(cfg.corpus),
                                      sort_keys=True)
                    if ckey not in corpora:
                        corpora[ckey] = generate_corpus(cfg.corpus)
                    train_videos, test_videos = corpora[ckey]
                    if log:
                        log(f"[{tname}/{name}] training")
                    params, _ = run_training(cfg, train_videos)
                    cache[key] = run_evaluation(cfg, params, test_videos)
                report = cache[key]
                for t in ABLATION_IOUS:
                    row[f"map_{t}"] = report.map.get(t)
                row["avg_map"] = report.avg_map
                row["kl"] = next(iter(report.kl.values()))
            except Exception as e:  # isolate the cell, keep the matrix alive
                row["error"] = f"{type(e).__name__}: {e}"
                for t in ABLATION_IOUS:
                    row[f"map_{t}"] = None
                row["avg_map"] = None
                row["kl"] = None
            rows.append(row)
        results[tname] = rows
        _write_ablation_csv(out / f"ablation_{tname}.csv", rows)
    return results


def _write_ablation_csv(path, rows):
    cols = ["name"] + [f"map_{t}" for t in ABLATION_IOUS] + \
        ["avg_map", "kl", "error"]
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for col in cols:
            v = row.get(col)
            cells.append("" if v is None else
                         (v if isinstance(v, str) else repr(v)))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
