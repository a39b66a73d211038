"""End-to-end experiment pipeline with seeded, manifest-driven stages.

A single master seed reproduces the whole study: every stage derives its own
seed by hashing the stage name into the master seed, and the emitted
manifest records a content hash for every artifact the run produced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, baseline, metrics
from ..errors import ValidationError
from ..io import (
    file_sha256,
    read_corpus,
    write_corpus,
    write_corpus_manifest,
    write_csv,
    write_json,
    write_metrics_csv,
    write_predictions,
)
from ..model import (
    ModelConfig,
    attention_ranges,
    encode_dataset,
    fine_tune,
    init_parameters,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from ..roadnet import RoadNetwork, load_network, make_grid_network, save_network
from ..trajgen import GenerationConfig, GpsTrajectory, generate_corpus, generate_pseudo_real

FINETUNE_MASKS = (
    "output",
    "output+norm",
    "output+encoder",
    "output+decoder",
    "output+encoder+decoder",
    "full",
)


def derive_seed(master_seed: int, stage: str) -> int:
    """Stable per-stage seed: low 63 bits of sha256(master:stage)."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValidationError("train_fraction must lie strictly between 0 and 1")


def split_corpus(trajectories: list[GpsTrajectory], spec: SplitSpec) -> tuple[list[GpsTrajectory], list[GpsTrajectory]]:
    """Trajectory-level random split; (train, test)."""
    order = np.random.default_rng(spec.seed).permutation(len(trajectories))
    n_train = int(len(trajectories) * spec.train_fraction)
    train_set = [trajectories[i] for i in order[:n_train]]
    test_set = [trajectories[i] for i in order[n_train:]]
    return train_set, test_set


@dataclass
class ExperimentSpec:
    seed: int = 7
    network: dict = field(default_factory=lambda: {"rows": 5, "cols": 5, "spacing_m": 200.0})
    synthetic: dict = field(default_factory=lambda: {"count": 4000, "sigma_m": 15.0})
    pseudo_real: dict = field(default_factory=lambda: {"count": 1331, "sigma_m": 15.0})
    generation: dict = field(
        default_factory=lambda: {"route_length": 4, "point_spacing_m": 30.0, "select_range": [2, 6]}
    )
    split: dict = field(default_factory=lambda: {"train_fraction": 0.70})
    model: dict = field(
        default_factory=lambda: {"d_model": 64, "n_heads": 4, "n_layers": 2, "d_ffn": 256, "dropout": 0.1, "max_len": 64}
    )
    pretrain: dict = field(default_factory=lambda: {"epochs": 10, "batch_size": 64, "lr": 7e-4})
    finetune: dict = field(default_factory=lambda: {"epochs": 8, "batch_size": 32, "lr": 3e-4})
    noise_sweep: dict = field(
        default_factory=lambda: {"enabled": True, "sigmas": [0.0, 15.0, 30.0, 60.0, 100.0], "count": 1200, "epochs": 4}
    )
    baseline: dict = field(default_factory=dict)
    attn_sample_index: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        spec = cls()
        for key, value in doc.items():
            if not hasattr(spec, key):
                raise ValidationError(f"unknown experiment manifest key {key!r}")
            current = getattr(spec, key)
            if isinstance(current, dict) and isinstance(value, dict):
                merged = dict(current)
                merged.update(value)
                setattr(spec, key, merged)
            else:
                setattr(spec, key, value)
        return spec

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "network": self.network,
            "synthetic": self.synthetic,
            "pseudo_real": self.pseudo_real,
            "generation": self.generation,
            "split": self.split,
            "model": self.model,
            "pretrain": self.pretrain,
            "finetune": self.finetune,
            "noise_sweep": self.noise_sweep,
            "baseline": self.baseline,
            "attn_sample_index": self.attn_sample_index,
        }


def _generation_config(spec: ExperimentSpec, corpus: dict, stage: str) -> GenerationConfig:
    doc = dict(spec.generation)
    doc["sigma_m"] = corpus.get("sigma_m", 15.0)
    doc["seed"] = derive_seed(spec.seed, stage)
    doc["select_range"] = tuple(doc.get("select_range", (2, 6)))
    return GenerationConfig(**doc)


def _load_or_make_network(spec: ExperimentSpec, out_dir: Path) -> tuple[RoadNetwork, Path]:
    net_path = out_dir / "network.json"
    if "path" in spec.network:
        net = load_network(spec.network["path"])
    else:
        net = make_grid_network(
            int(spec.network.get("rows", 5)),
            int(spec.network.get("cols", 5)),
            float(spec.network.get("spacing_m", 200.0)),
        )
    save_network(net, net_path)
    return net, net_path


def match_corpus_transformer(params, config, net, trajectories, *, with_probs: bool = False) -> list[dict]:
    bounds = net.bounds()
    rows = []
    for traj in trajectories:
        route, probs, _ = predict(params, config, traj, bounds, capture=False)
        row = {"traj_id": traj.traj_id, "route": route}
        if with_probs:
            row["probs"] = [[round(float(x), 6) for x in p] for p in probs]
        rows.append(row)
    return rows


def match_corpus_hmm(net, trajectories, cfg: baseline.HmmConfig) -> list[dict]:
    return [{"traj_id": t.traj_id, "route": baseline.viterbi_match(t, net, cfg)} for t in trajectories]


def evaluate_predictions(pred_rows: list[dict], truth: list[GpsTrajectory]) -> metrics.MetricReport:
    truth_by_id = {t.traj_id: t.truth for t in truth}
    pairs = []
    for row in pred_rows:
        pairs.append((list(row["route"]), truth_by_id[row["traj_id"]]))
    return metrics.evaluate_corpus(pairs)


def export_attention(records, out_dir: Path) -> tuple[Path, ...]:
    """CSV per stage/layer/head plus the threshold-range report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in records:
        path = out_dir / f"attention_{record.stage}_l{record.layer}_h{record.head}.csv"
        header = [f"k{j}" for j in range(record.weights.shape[1])]
        rows = [[f"{w:.9f}" for w in row] for row in record.weights]
        write_csv(path, header, rows)
        written.append(path)
    intervals, threshold = attention_ranges(records)
    ranges_path = out_dir / "ranges.csv"
    write_csv(ranges_path, ["position", "key_start", "key_end"], [[i, a, b] for i, (a, b) in enumerate(intervals)])
    threshold_path = out_dir / "threshold.json"
    write_json(threshold_path, {"threshold": threshold, "n_positions": len(intervals)})
    return (*written, ranges_path, threshold_path)


def run_experiment(spec: ExperimentSpec, out_dir) -> dict:
    """Full pipeline: generate, split, pretrain, sweeps, match, eval, attention.

    Returns the emitted manifest (also written to experiment_manifest.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}

    def record(path: Path) -> Path:
        artifacts[str(path.relative_to(out_dir))] = file_sha256(path)
        return path

    net, net_path = _load_or_make_network(spec, out_dir)
    record(net_path)
    bounds = net.bounds()
    n_classes = len(net.edges) + 1

    # corpora
    syn_cfg = _generation_config(spec, spec.synthetic, "synthetic")
    synthetic = generate_corpus(net, syn_cfg, int(spec.synthetic.get("count", 4000)))
    syn_path = out_dir / "corpus_synthetic.jsonl"
    write_corpus(synthetic, syn_path)
    write_corpus_manifest(out_dir / "corpus_synthetic.manifest.json", syn_cfg, len(synthetic), pseudo_real=False, network_path=net_path)
    record(syn_path)
    record(out_dir / "corpus_synthetic.manifest.json")

    pr_cfg = _generation_config(spec, spec.pseudo_real, "pseudo_real")
    pseudo = generate_pseudo_real(net, pr_cfg, int(spec.pseudo_real.get("count", 1331)))
    pr_path = out_dir / "corpus_pseudo_real.jsonl"
    write_corpus(pseudo, pr_path)
    write_corpus_manifest(out_dir / "corpus_pseudo_real.manifest.json", pr_cfg, len(pseudo), pseudo_real=True, network_path=net_path)
    record(pr_path)
    record(out_dir / "corpus_pseudo_real.manifest.json")

    split = SplitSpec(float(spec.split.get("train_fraction", 0.70)), derive_seed(spec.seed, "split"))
    tune_set, test_set = split_corpus(pseudo, split)
    tune_path = out_dir / "pseudo_train.jsonl"
    test_path = out_dir / "pseudo_test.jsonl"
    write_corpus(tune_set, tune_path)
    write_corpus(test_set, test_path)
    record(tune_path)
    record(test_path)

    # pretrain
    model_cfg = ModelConfig(n_classes=n_classes, **spec.model)
    params = init_parameters(model_cfg, derive_seed(spec.seed, "init"))
    train_ds = encode_dataset(synthetic, bounds)
    params, loss_log = train(
        params,
        model_cfg,
        train_ds,
        epochs=int(spec.pretrain.get("epochs", 10)),
        batch_size=int(spec.pretrain.get("batch_size", 64)),
        lr=float(spec.pretrain.get("lr", 7e-4)),
        seed=derive_seed(spec.seed, "pretrain"),
    )
    ckpt_path = out_dir / "pretrained.ckpt"
    save_checkpoint(ckpt_path, params, model_cfg)
    record(ckpt_path)
    loss_path = out_dir / "pretrain_loss.csv"
    write_csv(loss_path, ["epoch", "step", "loss"], [[r.epoch, r.step, f"{r.loss:.6f}"] for r in loss_log])
    record(loss_path)

    test_truth = {t.traj_id: t.truth for t in test_set}

    # noise sweep (pretrained models at several noise levels, one table)
    sweep_rows = []
    if spec.noise_sweep.get("enabled", True):
        for sigma in spec.noise_sweep.get("sigmas", [0.0, 15.0, 30.0, 60.0, 100.0]):
            sweep_cfg = _generation_config(spec, {"sigma_m": float(sigma)}, f"sweep_{sigma}")
            sweep_corpus = generate_corpus(net, sweep_cfg, int(spec.noise_sweep.get("count", 1200)))
            sweep_params = init_parameters(model_cfg, derive_seed(spec.seed, f"sweep_init_{sigma}"))
            sweep_params, _ = train(
                sweep_params,
                model_cfg,
                encode_dataset(sweep_corpus, bounds),
                epochs=int(spec.noise_sweep.get("epochs", 4)),
                batch_size=int(spec.pretrain.get("batch_size", 64)),
                lr=float(spec.pretrain.get("lr", 7e-4)),
                seed=derive_seed(spec.seed, f"sweep_train_{sigma}"),
            )
            preds = match_corpus_transformer(sweep_params, model_cfg, net, test_set)
            report = evaluate_predictions(preds, test_set)
            sweep_rows.extend(metrics.report_rows(f"transformer_sigma{sigma:g}", report))
        sweep_path = out_dir / "noise_sweep.csv"
        write_metrics_csv(sweep_path, sweep_rows)
        record(sweep_path)

    # fine-tune sweep over component masks (plus the untuned origin row)
    tune_ds = encode_dataset(tune_set, bounds)
    origin_report = evaluate_predictions(match_corpus_transformer(params, model_cfg, net, test_set), test_set)
    finetune_rows = metrics.report_rows("origin", origin_report)
    tuned_paths: dict[str, Path] = {}
    for mask in FINETUNE_MASKS:
        tuned = params.copy()
        tuned, _ = fine_tune(
            tuned,
            model_cfg,
            tune_ds,
            mask,
            epochs=int(spec.finetune.get("epochs", 8)),
            lr=float(spec.finetune.get("lr", 3e-4)),
            seed=derive_seed(spec.seed, f"finetune_{mask}"),
            batch_size=int(spec.finetune.get("batch_size", 32)),
        )
        mask_slug = mask.replace("+", "_")
        tuned_path = out_dir / f"finetuned_{mask_slug}.ckpt"
        save_checkpoint(tuned_path, tuned, model_cfg)
        record(tuned_path)
        tuned_paths[mask] = tuned_path
        report = evaluate_predictions(match_corpus_transformer(tuned, model_cfg, net, test_set), test_set)
        finetune_rows.extend(metrics.report_rows(mask, report))
    finetune_path = out_dir / "finetune_sweep.csv"
    write_metrics_csv(finetune_path, finetune_rows)
    record(finetune_path)

    # final comparison on the held-out set: fine-tuned transformer vs HMM
    final_params, _ = load_checkpoint(tuned_paths["full"])
    transformer_preds = match_corpus_transformer(final_params, model_cfg, net, test_set)
    pred_t_path = out_dir / "predictions_transformer.jsonl"
    write_predictions(pred_t_path, transformer_preds)
    record(pred_t_path)

    hmm_cfg = baseline.HmmConfig(**spec.baseline) if spec.baseline else baseline.HmmConfig()
    hmm_preds = match_corpus_hmm(net, test_set, hmm_cfg)
    pred_h_path = out_dir / "predictions_hmm.jsonl"
    write_predictions(pred_h_path, hmm_preds)
    record(pred_h_path)

    comparison_rows = metrics.report_rows("transformer", evaluate_predictions(transformer_preds, test_set))
    comparison_rows += metrics.report_rows("hmm", evaluate_predictions(hmm_preds, test_set))
    comparison_path = out_dir / "metrics.csv"
    write_metrics_csv(comparison_path, comparison_rows)
    record(comparison_path)

    # attention export for one sample trajectory
    sample = test_set[int(spec.attn_sample_index) % len(test_set)]
    _, _, records_list = predict(final_params, model_cfg, sample, bounds, capture=True)
    for path in export_attention(records_list, out_dir / "attn"):
        record(path)

    manifest = {
        "toolkit_version": __version__,
        "spec": spec.to_dict(),
        "stage_seeds": {
            stage: derive_seed(spec.seed, stage)
            for stage in ("synthetic", "pseudo_real", "split", "init", "pretrain")
        },
        "split_sizes": {"train": len(tune_set), "test": len(test_set)},
        "baseline": hmm_cfg.to_dict(),
        "artifacts": artifacts,
    }
    write_json(out_dir / "experiment_manifest.json", manifest)
    return manifest
