"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data or validation error,
4 internal error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__, baseline
from .errors import JoinError, MapMatchError
from .harness import (
    FINETUNE_MASKS,
    ExperimentSpec,
    export_attention,
    match_corpus_hmm,
    match_corpus_transformer,
    run_experiment,
)
from .io import (
    read_corpus,
    read_json,
    read_predictions,
    write_corpus,
    write_corpus_manifest,
    write_csv,
    write_metrics_csv,
    write_predictions,
)
from .metrics import evaluate_corpus, report_rows
from .model import (
    ModelConfig,
    encode_dataset,
    fine_tune,
    init_parameters,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .roadnet import load_network, make_grid_network, save_network
from .trajgen import GenerationConfig, generate_corpus, generate_pseudo_real

_POSITIVE = click.FloatRange(min=0, min_open=True)


@click.group()
@click.version_option(__version__)
def cli():
    """Offline GPS map matching toolkit."""


@cli.command("gen-net")
@click.option("--rows", type=click.IntRange(min=2), required=True)
@click.option("--cols", type=click.IntRange(min=2), required=True)
@click.option("--spacing", "spacing_m", type=_POSITIVE, default=200.0, show_default=True, help="Vertex spacing in meters.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True, path_type=Path), required=True)
def cmd_gen_net(rows: int, cols: int, spacing_m: float, out: Path):
    """Write a grid road network file."""
    net = make_grid_network(rows, cols, spacing_m)
    save_network(net, out)
    click.echo(f"wrote {out}: {len(net.vertices)} vertices, {len(net.edges)} edges")


def _generation_options(fn):
    fn = click.option("--route-length", type=click.IntRange(min=1), default=4, show_default=True)(fn)
    fn = click.option("--point-spacing", "point_spacing_m", type=_POSITIVE, default=30.0, show_default=True)(fn)
    fn = click.option("--select-min", type=click.IntRange(min=1), default=2, show_default=True)(fn)
    fn = click.option("--select-max", type=click.IntRange(min=1), default=6, show_default=True)(fn)
    fn = click.option("--sigma", "sigma_m", type=click.FloatRange(min=0), default=15.0, show_default=True)(fn)
    fn = click.option("--allow-uturn", is_flag=True, help="Permit immediate reversals in route generation.")(fn)
    return fn


@cli.command("gen-traj")
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--count", type=click.IntRange(min=0), required=True)
@_generation_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pseudo-real", is_flag=True, help="Shifted-statistics stand-in for real data.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True, path_type=Path), required=True)
def cmd_gen_traj(net_path, count, route_length, point_spacing_m, select_min, select_max, sigma_m, allow_uturn, seed, pseudo_real, out):
    """Generate a labeled trajectory corpus (JSONL plus a sidecar manifest)."""
    if select_max < select_min:
        raise click.UsageError("--select-max must be >= --select-min")
    net = load_network(net_path)
    cfg = GenerationConfig(
        route_length=route_length,
        point_spacing_m=point_spacing_m,
        select_range=(select_min, select_max),
        sigma_m=sigma_m,
        seed=seed,
        exclude_uturn=not allow_uturn,
    )
    generate = generate_pseudo_real if pseudo_real else generate_corpus
    corpus = generate(net, cfg, count)
    write_corpus(corpus, out)
    write_corpus_manifest(Path(f"{out}.manifest.json"), cfg, count, pseudo_real=pseudo_real, network_path=net_path)
    click.echo(f"wrote {out}: {len(corpus)} trajectories")


def _model_options(fn):
    fn = click.option("--d-model", type=click.IntRange(min=1), default=64, show_default=True)(fn)
    fn = click.option("--heads", "n_heads", type=click.IntRange(min=1), default=4, show_default=True)(fn)
    fn = click.option("--layers", "n_layers", type=click.IntRange(min=1), default=2, show_default=True)(fn)
    fn = click.option("--d-ffn", type=click.IntRange(min=1), default=256, show_default=True)(fn)
    fn = click.option("--dropout", type=click.FloatRange(min=0, max=1, max_open=True), default=0.1, show_default=True)(fn)
    fn = click.option("--max-len", type=click.IntRange(min=1), default=64, show_default=True)(fn)
    return fn


@cli.command("pretrain")
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@_model_options
@click.option("--epochs", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--lr", type=_POSITIVE, default=7e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True, path_type=Path), required=True)
@click.option("--loss-log", type=click.Path(dir_okay=False, writable=True, path_type=Path), default=None, help="CSV loss log (default: <out>.loss.csv).")
def cmd_pretrain(net_path, corpus_path, d_model, n_heads, n_layers, d_ffn, dropout, max_len, epochs, batch_size, lr, seed, out, loss_log):
    """Train a matcher from scratch on a labeled corpus."""
    net = load_network(net_path)
    corpus = read_corpus(corpus_path)
    if not corpus:
        raise click.UsageError("corpus is empty")
    config = ModelConfig(
        d_model=d_model, n_heads=n_heads, n_layers=n_layers, d_ffn=d_ffn,
        n_classes=len(net.edges) + 1, dropout=dropout, max_len=max_len,
    )
    params = init_parameters(config, seed)
    dataset = encode_dataset(corpus, net.bounds())
    params, log = train(params, config, dataset, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    save_checkpoint(out, params, config)
    loss_path = loss_log or Path(f"{out}.loss.csv")
    write_csv(loss_path, ["epoch", "step", "loss"], [[r.epoch, r.step, f"{r.loss:.6f}"] for r in log])
    click.echo(f"wrote {out} ({params.n_params()} parameters), loss log {loss_path}")


@cli.command("finetune")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--mask", type=click.Choice(FINETUNE_MASKS), default="full", show_default=True)
@click.option("--sweep", is_flag=True, help="Run every mask and emit a metrics CSV.")
@click.option("--eval-corpus", "eval_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Labeled test corpus (required with --sweep).")
@click.option("--epochs", type=click.IntRange(min=0), default=8, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--lr", type=_POSITIVE, default=3e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Checkpoint path, or a directory with --sweep.")
def cmd_finetune(checkpoint, net_path, corpus_path, mask, sweep, eval_path, epochs, batch_size, lr, seed, out):
    """Fine-tune selected model components on a labeled corpus."""
    net = load_network(net_path)
    corpus = read_corpus(corpus_path)
    if not corpus:
        raise click.UsageError("fine-tuning corpus is empty")
    dataset = encode_dataset(corpus, net.bounds())
    params, config = load_checkpoint(checkpoint)

    if not sweep:
        tuned, _ = fine_tune(params, config, dataset, mask, epochs=epochs, lr=lr, seed=seed, batch_size=batch_size)
        save_checkpoint(out, tuned, config)
        click.echo(f"wrote {out} (mask={mask})")
        return

    if eval_path is None:
        raise click.UsageError("--sweep requires --eval-corpus")
    eval_set = read_corpus(eval_path)
    if not eval_set or any(t.truth is None for t in eval_set):
        raise click.UsageError("--eval-corpus must be non-empty and labeled")
    out.mkdir(parents=True, exist_ok=True)
    bounds = net.bounds()

    def report_for(p):
        pairs = [(predict(p, config, t, bounds, capture=False)[0], t.truth) for t in eval_set]
        return evaluate_corpus(pairs)

    rows = report_rows("origin", report_for(params))
    for mask_name in FINETUNE_MASKS:
        tuned = params.copy()
        tuned, _ = fine_tune(tuned, config, dataset, mask_name, epochs=epochs, lr=lr, seed=seed, batch_size=batch_size)
        ckpt_path = out / f"finetuned_{mask_name.replace('+', '_')}.ckpt"
        save_checkpoint(ckpt_path, tuned, config)
        rows.extend(report_rows(mask_name, report_for(tuned)))
    csv_path = out / "finetune_sweep.csv"
    write_metrics_csv(csv_path, rows)
    click.echo(f"wrote {csv_path} and {len(FINETUNE_MASKS)} checkpoints to {out}")


@cli.command("match")
@click.option("--engine", type=click.Choice(["transformer", "hmm"]), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--trajectories", "traj_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--probs", is_flag=True, help="Include per-point class probabilities (transformer only).")
@click.option("--sigma-emission", type=_POSITIVE, default=15.0, show_default=True)
@click.option("--beta", type=_POSITIVE, default=50.0, show_default=True)
@click.option("--k", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--radius", type=_POSITIVE, default=100.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True, path_type=Path), required=True)
def cmd_match(engine, net_path, traj_path, checkpoint, probs, sigma_emission, beta, k, radius, out):
    """Match a trajectory file to per-point edge routes (JSONL)."""
    net = load_network(net_path)
    trajectories = read_corpus(traj_path)
    if engine == "transformer":
        if checkpoint is None:
            raise click.UsageError("--engine transformer requires --checkpoint")
        params, config = load_checkpoint(checkpoint)
        rows = match_corpus_transformer(params, config, net, trajectories, with_probs=probs)
    else:
        if probs:
            raise click.UsageError("--probs is only available with --engine transformer")
        cfg = baseline.HmmConfig(sigma_emission_m=sigma_emission, beta_transition=beta, k_candidates=k, radius_m=radius)
        rows = match_corpus_hmm(net, trajectories, cfg)
    write_predictions(out, rows)
    click.echo(f"wrote {out}: {len(rows)} predictions")


@cli.command("eval")
@click.option("--predictions", "pred_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--name", default="model", show_default=True, help="Model column value in the CSV.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True, path_type=Path), required=True)
def cmd_eval(pred_path, truth_path, name, out):
    """Score predictions against labeled truth at point and segment level."""
    preds = read_predictions(pred_path)
    truth = read_corpus(truth_path)
    truth_by_id = {t.traj_id: t.truth for t in truth if t.truth is not None}
    pred_ids = {row["traj_id"] for row in preds}
    missing = sorted(pred_ids.symmetric_difference(truth_by_id))
    if missing:
        raise JoinError(missing)
    pairs = [(list(row["route"]), truth_by_id[row["traj_id"]]) for row in preds]
    report = evaluate_corpus(pairs)
    write_metrics_csv(out, report_rows(name, report))
    click.echo(
        f"{name}: point ahd={report.ahd_point:.4f} f={report.f_point:.4f} bleu={report.bleu_point:.4f} | "
        f"segment ahd={report.ahd_segment:.4f} f={report.f_segment:.4f} bleu={report.bleu_segment:.4f}"
    )


@cli.command("attn")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--trajectories", "traj_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--index", type=click.IntRange(min=0), default=0, show_default=True, help="Trajectory line to analyze.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def cmd_attn(checkpoint, net_path, traj_path, index, out_dir):
    """Export attention weight matrices and the threshold-range report."""
    net = load_network(net_path)
    trajectories = read_corpus(traj_path)
    if index >= len(trajectories):
        raise click.UsageError(f"--index {index} out of range for {len(trajectories)} trajectories")
    params, config = load_checkpoint(checkpoint)
    _, _, records = predict(params, config, trajectories[index], net.bounds(), capture=True)
    written = export_attention(records, out_dir)
    click.echo(f"wrote {len(written)} files to {out_dir}")


@cli.command("experiment")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Experiment spec JSON (defaults used when omitted).")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def cmd_experiment(manifest_path, out_dir):
    """Run the full pipeline: generate, split, pretrain, sweeps, match, eval, attention."""
    spec = ExperimentSpec.from_dict(read_json(manifest_path)) if manifest_path else ExperimentSpec()
    manifest = run_experiment(spec, out_dir)
    click.echo(f"experiment complete: {len(manifest['artifacts'])} artifacts in {out_dir}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return int(exc.exit_code)
    except MapMatchError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except Exception as exc:  # internal fault
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
