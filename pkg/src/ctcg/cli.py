"""Command-line surface for the full training and analysis pipeline.

Every run is deterministic given its seeds; nothing is derived from the
clock. Usage errors exit with status 2 (argparse's convention); data and
model errors exit with status 1 and a one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, ensemble, guided, trainer
from .ctc import greedy_decode
from .data import SyntheticTaskSpec, generate_synthetic, load_dataset, save_dataset
from .errors import AlphabetMismatchError, CtcgError
from .seqmodel import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    ModelConfig,
    init_model,
    load_checkpoint,
    warm_start,
)


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_model_dataset(model, dataset) -> None:
    if model.config.input_dim != dataset.input_dim:
        raise AlphabetMismatchError(
            f"model expects {model.config.input_dim}-dim features, "
            f"dataset provides {dataset.input_dim}"
        )
    if model.config.output_dim != dataset.alphabet.num_symbols:
        raise AlphabetMismatchError(
            f"model emits {model.config.output_dim} symbols, "
            f"dataset alphabet has {dataset.alphabet.num_symbols}"
        )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden-dim", type=int, default=24, help="recurrent units per direction")
    p.add_argument("--num-layers", type=int, default=1, help="stacked recurrent layers")
    p.add_argument(
        "--direction",
        choices=[UNIDIRECTIONAL, BIDIRECTIONAL],
        default=UNIDIRECTIONAL,
        help="context direction",
    )
    p.add_argument("--seed", type=int, default=0, help="parameter init seed; also the shuffle seed unless --shuffle-seed is given")
    p.add_argument("--warm-start", default=None, help="checkpoint to initialize the encoder from (output layer is resampled)")


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value schedule file")
    p.add_argument("--epochs", type=int, default=None, help="training epochs")
    p.add_argument("--lr-initial", type=float, default=None, help="initial learning rate")
    p.add_argument("--momentum", type=float, default=None, help="Nesterov momentum")
    p.add_argument("--anneal-factor", type=float, default=None, help="per-epoch lr decay factor")
    p.add_argument("--anneal-start-epoch", type=int, default=None, help="first annealed epoch")
    p.add_argument("--batch-size", type=int, default=None, help="utterances per batch")
    p.add_argument("--clip-norm", type=float, default=None, help="global gradient norm cap (0 disables)")
    p.add_argument("--shuffle-seed", type=int, default=None, help="batch shuffle seed (defaults to --seed)")


def _build_schedule(args) -> trainer.TrainingSchedule:
    overrides = {
        "epochs": args.epochs,
        "lr_initial": args.lr_initial,
        "momentum": args.momentum,
        "anneal_factor": args.anneal_factor,
        "anneal_start_epoch": args.anneal_start_epoch,
        "batch_size": args.batch_size,
        "clip_norm": args.clip_norm,
        "seed": args.shuffle_seed if args.shuffle_seed is not None else args.seed,
    }
    return trainer.build_schedule(args.config, overrides)


def _build_model(args, dataset):
    if args.warm_start:
        model = warm_start(args.warm_start, output_seed=args.seed)
        _check_model_dataset(model, dataset)
        return model
    config = ModelConfig(
        input_dim=dataset.input_dim,
        hidden_dim=args.hidden_dim,
        num_layers=args.num_layers,
        direction=args.direction,
        output_dim=dataset.alphabet.num_symbols,
        seed=args.seed,
    )
    return init_model(config)


def _run_and_report(job, dataset, heldout, out_dir: Path) -> int:
    model, metrics = trainer.run_training(job, dataset, heldout)
    trainer.write_metrics_csv(metrics, out_dir / "metrics.csv")
    print(f"trained {len(metrics)} epochs")
    if metrics:
        print(f"final mean_train_loss {_fmt(metrics[-1].mean_train_loss)}")
        if metrics[-1].heldout_ser is not None:
            print(f"final heldout_ser {_fmt(metrics[-1].heldout_ser)}")
    print(f"checkpoints in {out_dir}")
    return 0


def _load_heldout(args):
    return load_dataset(args.heldout) if args.heldout else None


def _comma_paths(text: str) -> list[str]:
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _comma_floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list: {exc}") from exc


def cmd_gen_data(args) -> int:
    spec = SyntheticTaskSpec(
        alphabet_size=args.alphabet_size,
        input_dim=args.input_dim,
        min_symbols=args.min_symbols,
        max_symbols=args.max_symbols,
        min_segment_frames=args.min_segment_frames,
        max_segment_frames=args.max_segment_frames,
        noise_stddev=args.noise_stddev,
        seed=args.seed,
        allow_repeats=args.allow_repeats,
    )
    train = generate_synthetic(spec, args.num_train, id_prefix="train", stream=1)
    save_dataset(train, args.train_out)
    print(f"wrote {len(train)} training utterances to {args.train_out}")
    if args.heldout_out:
        heldout = generate_synthetic(spec, args.num_heldout, id_prefix="held", stream=2)
        save_dataset(heldout, args.heldout_out)
        print(f"wrote {len(heldout)} held-out utterances to {args.heldout_out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    heldout = _load_heldout(args)
    model = _build_model(args, dataset)
    _check_model_dataset(model, dataset)
    out_dir = Path(args.out)
    job = trainer.TrainingJob(
        model=model,
        schedule=_build_schedule(args),
        loss_mode="ctc",
        checkpoint_dir=out_dir,
    )
    return _run_and_report(job, dataset, heldout, out_dir)


def _obtain_masks(args, dataset):
    if args.masks and Path(args.masks).exists():
        return guided.load_mask_cache(args.masks)
    if not args.guiding_model:
        raise CtcgError("need --guiding-model (or an existing --masks cache)")
    guiding = load_checkpoint(args.guiding_model)
    _check_model_dataset(guiding, dataset)
    masks = guided.precompute_masks(guiding, dataset)
    if args.masks:
        guided.save_mask_cache(masks, args.masks)
    return masks


def cmd_train_guided(args) -> int:
    dataset = load_dataset(args.data)
    heldout = _load_heldout(args)
    masks = _obtain_masks(args, dataset)
    model = _build_model(args, dataset)
    _check_model_dataset(model, dataset)
    out_dir = Path(args.out)
    job = trainer.TrainingJob(
        model=model,
        schedule=_build_schedule(args),
        loss_mode="guided",
        masks=masks,
        guided_cfg=guided.GuidedLossConfig(
            guide_weight=args.guide_weight, variant=args.guide_variant
        ),
        checkpoint_dir=out_dir,
    )
    return _run_and_report(job, dataset, heldout, out_dir)


def cmd_distill(args) -> int:
    dataset = load_dataset(args.data)
    heldout = _load_heldout(args)
    if args.teacher_cache and Path(args.teacher_cache).exists():
        teacher_grids = ensemble.load_posterior_cache(args.teacher_cache)
    else:
        teachers = [load_checkpoint(p) for p in args.teachers]
        for t in teachers:
            _check_model_dataset(t, dataset)
        teacher_grids = ensemble.precompute_teacher_grids(teachers, dataset, args.weights)
        if args.teacher_cache:
            ensemble.save_posterior_cache(teacher_grids, args.teacher_cache)
    model = _build_model(args, dataset)
    _check_model_dataset(model, dataset)
    out_dir = Path(args.out)
    spec = ensemble.FusionSpec(
        member_model_ids=tuple(args.teachers),
        weights=tuple(args.weights) if args.weights else (),
    )
    job = trainer.TrainingJob(
        model=model,
        schedule=_build_schedule(args),
        loss_mode="distill",
        teacher_grids=teacher_grids,
        distill_cfg=ensemble.DistillationConfig(teacher=spec, kd_weight=args.kd_weight),
        checkpoint_dir=out_dir,
    )
    return _run_and_report(job, dataset, heldout, out_dir)


def cmd_decode(args) -> int:
    dataset = load_dataset(args.data)
    model = load_checkpoint(args.model)
    _check_model_dataset(model, dataset)
    utts = dataset.utterances
    if args.utterance_id:
        utts = (dataset.by_id(args.utterance_id),)
    for utt in utts:
        grid, _ = model.forward(utt.features)
        decoded = greedy_decode(grid)
        symbols = " ".join(dataset.alphabet.symbol(s) for s in decoded)
        print(f"{utt.id}\t{symbols}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model = load_checkpoint(args.model)
    _check_model_dataset(model, dataset)
    print(f"ser {_fmt(trainer.evaluate_ser(model, dataset))}")
    return 0


def cmd_fuse_eval(args) -> int:
    dataset = load_dataset(args.data)
    models = [load_checkpoint(p) for p in args.models]
    for m in models:
        _check_model_dataset(m, dataset)
    print(f"ser {_fmt(ensemble.fused_ser(models, dataset, args.weights))}")
    return 0


def cmd_analyze_coverage(args) -> int:
    dataset = load_dataset(args.data)
    model_a = load_checkpoint(args.model_a)
    model_b = load_checkpoint(args.model_b)
    _check_model_dataset(model_a, dataset)
    _check_model_dataset(model_b, dataset)
    alphabet = dataset.alphabet
    if args.ignore_symbols:
        alphabet = alphabet.with_ignored(set(args.ignore_symbols))
    scored = replace(dataset, alphabet=alphabet)
    spikes_a = analysis.compute_spike_sets(model_a, scored, args.threshold)
    spikes_b = analysis.compute_spike_sets(model_b, scored, args.threshold)
    pct = analysis.coverage_ratio(
        spikes_a, spikes_b, window=args.window, match_symbol=not args.frame_only
    )
    print(f"coverage {_fmt(pct)}")
    if args.out:
        pair = f"{Path(args.model_a).stem}_covered_by_{Path(args.model_b).stem}"
        analysis.write_coverage_report([(pair, Path(args.data).stem, pct)], args.out)
    return 0


def cmd_dump_posteriors(args) -> int:
    dataset = load_dataset(args.data)
    model = load_checkpoint(args.model)
    _check_model_dataset(model, dataset)
    utt = dataset.by_id(args.utterance_id)
    analysis.dump_posteriors(model, utt, args.out)
    print(f"wrote {utt.num_frames} frames to {args.out}")
    return 0


def cmd_export_masks(args) -> int:
    dataset = load_dataset(args.data)
    guiding = load_checkpoint(args.guiding_model)
    _check_model_dataset(guiding, dataset)
    masks = guided.precompute_masks(guiding, dataset)
    guided.save_mask_cache(masks, args.out)
    print(f"wrote masks for {len(masks)} utterances to {args.out}")
    if args.csv:
        guided.export_mask_csv(masks, args.csv)
        print(f"wrote csv to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctcg",
        description="Sequence-labeling training toolkit: alignment-free loss, "
        "spike-guided training, posterior fusion, and distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(
            name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate the synthetic labeling task")
    p.add_argument("--train-out", required=True, help="output path for the training set")
    p.add_argument("--heldout-out", default=None, help="output path for the held-out set")
    p.add_argument("--num-train", type=int, default=2000, help="training utterances")
    p.add_argument("--num-heldout", type=int, default=200, help="held-out utterances")
    p.add_argument("--alphabet-size", type=int, default=6, help="number of symbols")
    p.add_argument("--input-dim", type=int, default=8, help="feature dimension")
    p.add_argument("--min-symbols", type=int, default=3, help="shortest target length")
    p.add_argument("--max-symbols", type=int, default=8, help="longest target length")
    p.add_argument("--min-segment-frames", type=int, default=2, help="shortest symbol hold")
    p.add_argument("--max-segment-frames", type=int, default=6, help="longest symbol hold")
    p.add_argument("--noise-stddev", type=float, default=0.3, help="per-frame noise")
    p.add_argument("--allow-repeats", action="store_true", help="allow adjacent repeated symbols")
    p.add_argument("--seed", type=int, default=0, help="generator seed")

    p = add("train", cmd_train, "plain alignment-loss training")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--heldout", default=None, help="held-out dataset file")
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    _add_model_flags(p)
    _add_schedule_flags(p)

    p = add("train-guided", cmd_train_guided, "training with a spike-timing guide")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--heldout", default=None, help="held-out dataset file")
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--guiding-model", default=None, help="frozen guiding checkpoint")
    p.add_argument("--masks", default=None, help="mask cache path (loaded if present, else written)")
    p.add_argument("--guide-weight", type=float, default=1.0, help="guide loss weight")
    p.add_argument(
        "--guide-variant",
        choices=[guided.LINEAR, guided.LOGARITHMIC],
        default=guided.LINEAR,
        help="guide loss form",
    )
    _add_model_flags(p)
    _add_schedule_flags(p)

    p = add("distill", cmd_distill, "train a student from fused teacher posteriors")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--heldout", default=None, help="held-out dataset file")
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--teachers", type=_comma_paths, required=True, help="comma-separated teacher checkpoints")
    p.add_argument("--weights", type=_comma_floats, default=None, help="comma-separated fusion weights")
    p.add_argument("--kd-weight", type=float, default=1.0, help="KD vs alignment loss mix in [0,1]")
    p.add_argument("--teacher-cache", default=None, help="posterior cache path (loaded if present, else written)")
    _add_model_flags(p)
    _add_schedule_flags(p)

    p = add("decode", cmd_decode, "greedy decode and print hypotheses")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--utterance-id", default=None, help="decode a single utterance")

    p = add("eval", cmd_eval, "sequence error rate of one model")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset file")

    p = add("fuse-eval", cmd_fuse_eval, "sequence error rate of fused posteriors")
    p.add_argument("--models", type=_comma_paths, required=True, help="comma-separated checkpoints")
    p.add_argument("--weights", type=_comma_floats, default=None, help="comma-separated fusion weights")
    p.add_argument("--data", required=True, help="dataset file")

    p = add("analyze-coverage", cmd_analyze_coverage, "spike coverage of model A by model B")
    p.add_argument("--model-a", required=True, help="covered model checkpoint")
    p.add_argument("--model-b", required=True, help="covering model checkpoint")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--ignore-symbols", type=_comma_paths, default=None, help="extra symbols excluded from spikes")
    p.add_argument("--window", type=int, default=0, help="frame tolerance for a match")
    p.add_argument("--frame-only", action="store_true", help="match frames without requiring the same symbol")
    p.add_argument("--threshold", type=float, default=0.0, help="minimum winning posterior for a spike")
    p.add_argument("--out", default=None, help="coverage report CSV path")

    p = add("dump-posteriors", cmd_dump_posteriors, "write one utterance's posterior grid as CSV")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--utterance-id", required=True, help="utterance to dump")
    p.add_argument("--out", required=True, help="CSV output path")

    p = add("export-masks", cmd_export_masks, "precompute and store guide masks")
    p.add_argument("--guiding-model", required=True, help="frozen guiding checkpoint")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="mask cache output path")
    p.add_argument("--csv", default=None, help="optional human-readable CSV")

    return parser


def entry(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CtcgError, OSError) as exc:
        message = str(exc) or exc.__class__.__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(entry())
