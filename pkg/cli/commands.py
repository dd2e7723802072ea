"""
Command handlers. Each takes the parsed arguments and the resolved RunConfig,
prints a short summary to stdout and returns the process exit code.
"""
import argparse
import csv
import dataclasses
import logging
from pathlib import Path

from exceptions import DataFormatError, InvalidArgumentError
from app_logic import (
    CSV_HEADER, HEADS, SWEEP_HEADER, Example, FeatureNormalizer, LabeledClip, LabeledEvent,
    binarize, build, count_parameters, decode_events, dropout_sweep, evaluate_annotations,
    extract_many, fill_gaps, fit, format_report, forward, generate_dataset, label_index, load_checkpoint,
    load_clip, load_manifest, load_split, median_filter, sweep_weight_pairs, parallel_map,
    read_wav, render_saliency_image, report_to_csv_row, run_suite, saliency, save_checkpoint,
    select_classes, weak_from_strong, weight_sweep, write_dataset, write_feature_matrix, write_strong,
    write_weak,
)
from .constants import EXIT_NUMERICAL, EXIT_OK
from .run_config import RunConfig

logger = logging.getLogger(__name__)


def _normalized(examples: list[Example], normalizer: FeatureNormalizer) -> list[Example]:
    return [dataclasses.replace(e, features=normalizer.apply(e.features)) for e in examples]


def _prepare_splits(train_path: str, validation_path: str, run_config: RunConfig):
    """
    Loads both splits, fits the feature normalizer on the training split and
    applies it to both.
    """
    features = run_config.features
    train_manifest, train_set = load_split(train_path, features, run_config.threads)
    validation_manifest, validation_set = load_split(validation_path, features, run_config.threads)
    if validation_manifest.vocabulary != train_manifest.vocabulary:
        raise DataFormatError(
            f"Validation vocabulary {validation_manifest.vocabulary} differs from the training "
            f"vocabulary {train_manifest.vocabulary}.")
    normalizer = FeatureNormalizer().fit([e.features for e in train_set])
    logger.info("Loaded %d training and %d validation clips over %d classes.",
                len(train_set), len(validation_set), len(train_manifest.vocabulary))
    return (train_manifest.vocabulary, normalizer, _normalized(train_set, normalizer),
            _normalized(validation_set, normalizer))


def cmd_synth(args: argparse.Namespace, run_config: RunConfig) -> int:
    classes = select_classes(args.classes, args.preset)
    clips, manifest = generate_dataset(
        args.clips, classes, clip_s=args.clip_seconds, polyphony_max=args.polyphony,
        seed=args.seed, sample_rate=args.sample_rate, split=args.split,
        threads=run_config.threads)
    manifest_path = write_dataset(clips, manifest, args.out)
    events = sum(len(c.strong or []) for c in clips)
    print(f"Wrote {len(clips)} clips, {len(classes)} classes, {events} events -> {manifest_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, run_config: RunConfig) -> int:
    train_config = run_config.train_config()
    vocabulary, normalizer, train_set, validation_set = _prepare_splits(
        args.train, args.validation, run_config)
    model_config = run_config.model_config(len(vocabulary))
    model = build(model_config)

    checkpoint_path = Path(args.out)
    log_path = Path(args.log) if args.log else checkpoint_path.with_suffix('.csv')
    logger.info("Training %s with %d parameters: strong weight %g, weak weight %g, dropout %g.",
                model_config.architecture, count_parameters(model), train_config.strong_weight,
                train_config.weak_weight, train_config.dropout_rate)
    result = fit(model, train_set, validation_set, train_config, log_path)
    save_checkpoint(checkpoint_path, model, normalizer, vocabulary, run_config.features)

    best = result.history[result.best_epoch - 1] if result.best_epoch else None
    print(f"Best epoch {result.best_epoch} of {len(result.history)}"
          f"{' (stopped early)' if result.stopped_early else ''}, metric {result.best_metric:.4f}")
    if best is not None:
        er = 'n/a' if best.strong_er is None else f"{best.strong_er:.2f}"
        print(f"Validation weak F {best.f_score:.1f}, strong ER {er}")
    print(f"Checkpoint: {checkpoint_path}  Log: {log_path}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, run_config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    decoding = run_config.decoding.validate()
    if args.manifest:
        manifest = load_manifest(args.manifest)
        clips = parallel_map(lambda entry: load_clip(entry, manifest.root), manifest.entries,
                             run_config.threads)
    else:
        clips = [LabeledClip(Path(p).name, read_wav(p), set()) for p in args.wav]

    matrices = extract_many([c.clip for c in clips], checkpoint.feature_config, run_config.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    weak_labels: dict[str, set[str]] = {}
    events: dict[str, list[LabeledEvent]] = {}
    for labeled, matrix in zip(clips, matrices):
        features = checkpoint.normalizer.apply(matrix)
        strong, _ = forward(checkpoint.model, features)
        write_feature_matrix(out_dir / f"{Path(labeled.name).stem}.strong.wsedf", strong)

        weak_labels[labeled.name] = {checkpoint.vocabulary[c]
                                     for c in weak_from_strong(strong, decoding.threshold)}
        grid = median_filter(binarize(strong, decoding.threshold), decoding.median_width)
        decoded = fill_gaps(decode_events(grid, features.frame_hop_s), decoding.min_gap_s)
        events[labeled.name] = [LabeledEvent(checkpoint.vocabulary[e.class_index], e.onset, e.offset)
                                for e in decoded]
        logger.debug("%s: %d frames, weak %s, %d events.", labeled.name, strong.shape[0],
                     sorted(weak_labels[labeled.name]), len(decoded))

    write_weak(out_dir / 'weak.tsv', weak_labels)
    if not args.no_events:
        write_strong(out_dir / 'events.tsv', events)
    print(f"Predicted {len(clips)} clips -> {out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, run_config: RunConfig) -> int:
    report = evaluate_annotations(args.reference, args.estimate, args.reference_weak,
                                  args.estimate_weak, segment_s=args.segment,
                                  duration_s=args.duration)
    print(format_report(report))
    if args.csv:
        csv_path = Path(args.csv)
        is_new = not csv_path.exists()
        with open(csv_path, 'a', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            if is_new:
                writer.writerow(CSV_HEADER)
            writer.writerow(report_to_csv_row(report))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, run_config: RunConfig) -> int:
    results = run_suite(seed=args.seed, seeds=args.seeds, inject_fault=args.inject_fault,
                        tolerance=args.tolerance)
    for result in results:
        print(f"{result.operator:<16} {result.max_error:.3e}  {'ok' if result.passed else 'FAILED'}")
    failed = [r.operator for r in results if not r.passed]
    if failed:
        logger.error("Gradient check failed for: %s", ', '.join(failed))
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_NUMERICAL
    print(f"All {len(results)} operators pass (tolerance {args.tolerance:g}).")
    return EXIT_OK


def _resolve_class(class_ref: str, vocabulary: list[str]) -> int:
    if class_ref.isdigit():
        index = int(class_ref)
        if index >= len(vocabulary):
            raise InvalidArgumentError(
                f"Class index {index} is outside 0..{len(vocabulary) - 1}.", code='UNKNOWN_CLASS')
        return index
    try:
        return label_index(vocabulary, class_ref)
    except DataFormatError:
        raise InvalidArgumentError(
            f"Unknown class '{class_ref}'; expected one of {vocabulary}.",
            code='UNKNOWN_CLASS') from None


def cmd_saliency(args: argparse.Namespace, run_config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    class_index = _resolve_class(args.class_ref, checkpoint.vocabulary)
    features = checkpoint.normalizer.apply(
        extract_many([read_wav(args.wav)], checkpoint.feature_config)[0])

    out_dir = Path(args.out)
    stem = f"{Path(args.wav).stem}.{checkpoint.vocabulary[class_index]}"
    heads = HEADS if args.head == 'both' else (args.head,)
    for head in heads:
        saliency_map = saliency(checkpoint.model, features, class_index, head)
        write_feature_matrix(out_dir / f"{stem}.{head}.wsedf", saliency_map)
        render_saliency_image(saliency_map, out_dir / f"{stem}.{head}.png")
        print(f"{head}: {saliency_map.shape[0]}x{saliency_map.shape[1]} map, "
              f"peak {saliency_map.max():.3e} -> {out_dir / (stem + '.' + head)}.*")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, run_config: RunConfig) -> int:
    vocabulary, _, train_set, validation_set = _prepare_splits(
        args.train, args.validation, run_config)
    model_config = run_config.model_config(len(vocabulary))
    train_config = run_config.train_config()

    if args.dropouts:
        rows = dropout_sweep(train_set, validation_set, args.dropouts, model_config, train_config)
        header = ['dropout_rate', *SWEEP_HEADER]
    else:
        rows = weight_sweep(train_set, validation_set, sweep_weight_pairs(args.weights),
                            model_config, train_config)
        header = SWEEP_HEADER

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row.csv_row(include_dropout=bool(args.dropouts)))
    for row in rows:
        print(','.join(row.csv_row(include_dropout=bool(args.dropouts))))
    print(f"Wrote {len(rows)} rows -> {out_path}")
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'predict': cmd_predict,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'saliency': cmd_saliency,
    'sweep': cmd_sweep,
}
