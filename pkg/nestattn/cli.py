"""
Command-line interface

Every command reads a run config (or the config echoed in a checkpoint),
writes only files under ``--out`` (default ``<output_root>/<command>``) and
logs to ``<out>/run.log``. Scientific outputs never carry timestamps, so
repeating a command with the same config and seeds reproduces them bit for
bit.

Exit codes: 0 success, 1 usage or configuration error, 2 a check failed
during the run.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .attention.capture import AttentionCapture
from .core.config import RunConfig, get_settings, load_run_config
from .core.exceptions import ConfigurationError, NestAttnException, ShapeError, ValidationError, exit_code_for
from .core.logging import bind_run_context, get_logger, log_error, setup_logging
from .core.models import MechanismKind
from .core.utils import prepare_output_directory
from .data.dataset import SyntheticSample, build_dataset_from_config, dataset_checksum, load_dataset, save_dataset
from .data.imageio import read_image, to_model_space, to_pixels, write_ppm
from .data.render import IMAGE_SIZE
from .data.vocab import parse_attributes, word_index
from .denoiser.checkpoint import ModelBundle, check_host_compatible, load_bundle
from .denoiser.pipeline import bind_reference, train_adapter, train_host
from .denoiser.prompt import PromptEmbedding, retarget_subject
from .denoiser.sampling import sample
from .metrics import checks
from .metrics.evaluation import EvaluationSet
from .metrics.records import (
    ALPHA_COLUMNS,
    QUERY_COLUMNS,
    curve_records,
    emit_losses,
    emit_records,
    emit_table,
    scatter_ppm,
)
from .metrics.sweeps import (
    ablate_alpha,
    ablate_queries,
    compare_mechanisms,
    sweep_lambda,
)
from .metrics.visualize import annotate_capture, visualize_capture_dir

logger = get_logger("nestattn.cli")

CONFIG_ECHO = "config.toml"
RUN_LOG = "run.log"
# Loss windows compared by the training trend check
LOSS_WINDOW = 50


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with 1, the code shared with configuration errors"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=None, help="Output directory (default: <NESTATTN_OUTPUT_ROOT>/<command>)")
    parser.add_argument("--jobs", type=int, default=None, help="Generation worker threads (default: config run.jobs)")
    parser.add_argument("--force", action="store_true", help="Write into a non-empty output directory")
    parser.add_argument("--strict", action="store_true", help="Fail (exit 2) when a direction check fails")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="nestattn", description="Nested-attention subject personalization on a toy diffusion model")
    parser.add_argument("--log-level", default=None, help="Override NESTATTN_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = commands.add_parser("gen-data", help="Render the synthetic triplet dataset")
    gen.add_argument("--config", required=True)
    _common(gen)

    train = commands.add_parser("train", help="Stage A (host) or stage B (subject adapter) training")
    train.add_argument("--config", required=True)
    train.add_argument("--stage", choices=["A", "B"], default=None, help="Default: config train.stage")
    train.add_argument("--host-checkpoint", default=None, help="Stage-A checkpoint (stage B)")
    train.add_argument("--mechanism", choices=[m.value for m in MechanismKind], default=None)
    train.add_argument("--data", default=None, help="Dataset directory (default: render from the config)")
    _common(train)

    smp = commands.add_parser("sample", help="Generate images from a checkpoint")
    smp.add_argument("--checkpoint", required=True)
    smp.add_argument("--prompt", required=True)
    smp.add_argument("--ref-images", nargs="+", action="append", default=[],
                     help="Reference images of one subject; repeat the flag once per subject")
    smp.add_argument("--subject", action="append", default=[], help="Prompt word bound to each --ref-images group")
    smp.add_argument("--subject-checkpoint", action="append", default=[],
                     help="Adapter checkpoint per --subject (default: --checkpoint)")
    smp.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=[1.0])
    smp.add_argument("--retarget-word", default=None)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--steps", type=int, default=None, help="Default: config schedule.sample_steps")
    smp.add_argument("--capture", action="store_true", help="Export attention internals per lambda")
    _common(smp)

    sweep = commands.add_parser("sweep-lambda", help="Tradeoff curve of one checkpoint")
    sweep.add_argument("--checkpoint", required=True)
    sweep.add_argument("--lambdas", type=float, nargs="+", default=None)
    _common(sweep)

    compare = commands.add_parser("compare-mechanisms", help="Tradeoff curves of several mechanism checkpoints")
    compare.add_argument("--checkpoints", nargs="+", required=True)
    _common(compare)

    queries = commands.add_parser("ablate-queries", help="Identity score per learned-query count")
    queries.add_argument("--config", required=True)
    queries.add_argument("--host-checkpoint", required=True)
    queries.add_argument("--grid", type=int, nargs="+", default=None)
    queries.add_argument("--data", default=None)
    _common(queries)

    alpha = commands.add_parser("ablate-alpha", help="Scores and value norms per regularization setting")
    alpha.add_argument("--config", required=True)
    alpha.add_argument("--host-checkpoint", required=True)
    alpha.add_argument("--grid", nargs="+", default=None, help='Values or "none"')
    alpha.add_argument("--data", default=None)
    _common(alpha)

    viz = commands.add_parser("viz-attn", help="PGM heatmaps from a capture directory")
    viz.add_argument("--capture-dir", required=True)
    viz.add_argument("--probes", type=int, default=None, help="Default: the count stored with the capture")
    _common(viz)
    return parser


def _echo_config(config: RunConfig, out: Path) -> None:
    bind_run_context(config_digest=config.digest())
    (out / CONFIG_ECHO).write_text(config.canonical_text(), encoding="utf-8", newline="\n")


def _jobs(args, config: RunConfig) -> int:
    jobs = args.jobs if args.jobs is not None else config.run.jobs
    if jobs < 1:
        raise ValidationError("--jobs must be at least 1", field="jobs", value=jobs)
    return jobs


def _samples(args, config: RunConfig) -> List[SyntheticSample]:
    if getattr(args, "data", None):
        return load_dataset(args.data, max_tokens=config.model.max_tokens)
    return build_dataset_from_config(config.data, max_tokens=config.model.max_tokens)


def _load_host(path: str, config: RunConfig) -> ModelBundle:
    host = load_bundle(path)
    check_host_compatible(host.config, config, path)
    return host


def cmd_gen_data(args, out: Path) -> int:
    config = load_run_config(args.config)
    samples = build_dataset_from_config(config.data, max_tokens=config.model.max_tokens)
    save_dataset(samples, out)
    _echo_config(config, out)
    checksum = dataset_checksum(samples)
    logger.info("Dataset written", samples=len(samples), checksum=checksum)
    print(checksum)
    return 0


def cmd_train(args, out: Path) -> int:
    config = load_run_config(args.config)
    stage = args.stage or config.train.stage
    overrides: Dict[str, dict] = {"train": {"stage": stage}}
    if args.mechanism:
        overrides["personalization"] = {"mechanism": args.mechanism}
    if args.host_checkpoint:
        overrides["train"]["host_checkpoint"] = args.host_checkpoint
    config = config.with_overrides(**overrides)
    samples = _samples(args, config)

    if stage == "A":
        bundle, result = train_host(config, samples)
    else:
        host_path = config.train.host_checkpoint
        if not host_path:
            raise ConfigurationError("stage B needs a frozen stage-A checkpoint (--host-checkpoint)",
                                     setting="train.host_checkpoint")
        bundle, result = train_adapter(config, _load_host(host_path, config), samples, host_path)

    path = bundle.save(out / "model.ckpt")
    emit_losses(result.losses, stage, out / "losses.csv", bundle.config.digest())
    _echo_config(bundle.config, out)
    print(path)

    results = []
    if len(result.losses) >= 2 * LOSS_WINDOW:
        head = float(np.mean(result.losses[:LOSS_WINDOW]))
        tail = float(np.mean(result.losses[-LOSS_WINDOW:]))
        results.append(checks.CheckResult("loss_trend", tail < head, checks.DIRECTION, f"{head:.4f} -> {tail:.4f}"))
    checks.enforce(results, strict=args.strict)
    return 0


def _read_reference(path: str) -> torch.Tensor:
    pixels = read_image(path)
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ShapeError(f"reference image {path} must be {IMAGE_SIZE}x{IMAGE_SIZE}", shapes=[pixels.shape],
                         operation="sample")
    return to_model_space(pixels)


def _subject_bundles(args, bundle: ModelBundle) -> List[ModelBundle]:
    groups = len(args.ref_images)
    if args.subject_checkpoint and len(args.subject_checkpoint) != groups:
        raise ValidationError("give one --subject-checkpoint per --ref-images group", field="subject_checkpoint")
    if not args.subject_checkpoint:
        return [bundle] * groups
    bundles = []
    for path in args.subject_checkpoint:
        other = load_bundle(path)
        check_host_compatible(bundle.config, other.config, path)
        bundles.append(ModelBundle(config=other.config, host=bundle.host, schedule=bundle.schedule,
                                   adapter=other.adapter))
    return bundles


def cmd_sample(args, out: Path) -> int:
    bundle = load_bundle(args.checkpoint)
    config = bundle.config
    prompt = PromptEmbedding.from_text(args.prompt, max_tokens=config.model.max_tokens)
    if args.retarget_word:
        prompt = retarget_subject(prompt, args.retarget_word)

    groups = [[_read_reference(p) for p in group] for group in args.ref_images]
    if args.subject and len(args.subject) != len(groups):
        raise ValidationError("give one --subject word per --ref-images group", field="subject")
    if len(groups) > 1 and not args.subject:
        raise ValidationError("several --ref-images groups need a --subject word each", field="subject")
    indices: List[Optional[int]] = [word_index(prompt.token_ids, w) for w in args.subject] or [None] * len(groups)
    subject_bundles = _subject_bundles(args, bundle)
    steps = args.steps or config.schedule.sample_steps
    attributes = parse_attributes(prompt.words)
    _echo_config(config, out)

    for lam in args.lambdas:
        subjects = [
            bind_reference(b, prompt, images, value=lam, subject_index=index,
                           source_ids=[f"subject{g}-view{v}" for v in range(len(images))])
            for g, (b, images, index) in enumerate(zip(subject_bundles, groups, indices))
        ]
        capture = AttentionCapture() if args.capture else None
        image = sample(prompt, subjects, steps, args.seed, bundle.schedule, bundle.host, capture=capture)
        path = write_ppm(out / f"sample_lambda_{lam:.2f}.ppm", to_pixels(image))
        if capture is not None:
            if groups:
                annotate_capture(capture, subject_bundles[0], groups[0][0], attributes.position)
            capture.export(out / f"capture_lambda_{lam:.2f}")
        logger.info("Sampled", path=str(path), lam=lam, subjects=len(subjects), seed=args.seed)
        print(path)
    return 0


def _emit_curves(curves, out: Path, digests: Sequence[str]) -> None:
    emit_records(curve_records(curves), out / "records.csv", digests)
    scatter_ppm(curves, out / "scatter.ppm")


def cmd_sweep_lambda(args, out: Path) -> int:
    bundle = load_bundle(args.checkpoint)
    if bundle.mechanism is None:
        raise ValidationError("checkpoint has no subject adapter; train stage B first", field="checkpoint")
    evaluation = EvaluationSet.from_config(bundle.config)
    curve = sweep_lambda(bundle, bundle.mechanism, args.lambdas, evaluation, jobs=_jobs(args, bundle.config))
    _emit_curves([curve], out, [bundle.config.digest()] * len(curve.records))
    _echo_config(bundle.config, out)
    results = checks.check_curve(curve, expected_samples=len(evaluation))
    if curve.mechanism is MechanismKind.NESTED:
        results += checks.check_tradeoff(curve)
    checks.enforce(results, strict=args.strict)
    return 0


def cmd_compare_mechanisms(args, out: Path) -> int:
    bundles: Dict[MechanismKind, ModelBundle] = {}
    for path in args.checkpoints:
        bundle = load_bundle(path)
        if bundle.mechanism is None:
            raise ValidationError(f"{path} has no subject adapter", field="checkpoints", value=path)
        if bundle.mechanism in bundles:
            raise ValidationError(f"two checkpoints for {bundle.mechanism.value}", field="checkpoints", value=path)
        bundles[bundle.mechanism] = bundle
    first = next(iter(bundles.values()))
    evaluation = EvaluationSet.from_config(first.config)
    curves = compare_mechanisms(bundles, evaluation=evaluation, jobs=_jobs(args, first.config))
    digests = [bundles[c.mechanism].config.digest() for c in curves for _ in c.records]
    _emit_curves(curves, out, digests)
    results = []
    for curve in curves:
        results += checks.check_curve(curve, expected_samples=len(evaluation))
    results += checks.check_mechanism_ordering(curves)
    checks.enforce(results, strict=args.strict)
    return 0


def cmd_ablate_queries(args, out: Path) -> int:
    config = load_run_config(args.config)
    host = _load_host(args.host_checkpoint, config)
    rows = ablate_queries(config, host, _samples(args, config), grid=args.grid, jobs=_jobs(args, config),
                          save_dir=out / "checkpoints")
    emit_table([r.as_row() for r in rows], QUERY_COLUMNS, out / "queries.csv", config.digest())
    _echo_config(config, out)
    results = checks.check_query_ablation({r.num_queries: r.identity_score for r in rows})
    checks.enforce(results, strict=args.strict)
    return 0


def _alpha_value(text: str):
    if text == "none":
        return "none"
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f'alpha must be a number or "none", got {text!r}', field="alpha", value=text)


def cmd_ablate_alpha(args, out: Path) -> int:
    config = load_run_config(args.config)
    host = _load_host(args.host_checkpoint, config)
    grid = None if args.grid is None else [_alpha_value(v) for v in args.grid]
    rows = ablate_alpha(config, host, _samples(args, config), grid=grid, jobs=_jobs(args, config),
                        save_dir=out / "checkpoints")
    emit_table([r.as_row() for r in rows], ALPHA_COLUMNS, out / "alpha.csv", config.digest())
    _echo_config(config, out)
    results = checks.check_alpha_ablation({
        r.alpha: {"identity_score": r.identity_score, "prompt_score": r.prompt_score, "norm_ratio": r.norm_ratio}
        for r in rows
    })
    checks.enforce(results, strict=args.strict)
    return 0


def cmd_viz_attn(args, out: Path) -> int:
    summary = visualize_capture_dir(args.capture_dir, out, probes=args.probes)
    results = [] if summary.hit_rate is None else checks.check_tracing(summary.hit_rate)
    checks.enforce(results, strict=args.strict)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep-lambda": cmd_sweep_lambda,
    "compare-mechanisms": cmd_compare_mechanisms,
    "ablate-queries": cmd_ablate_queries,
    "ablate-alpha": cmd_ablate_alpha,
    "viz-attn": cmd_viz_attn,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    torch.set_num_threads(settings.threads)
    try:
        out = prepare_output_directory(args.out or str(Path(settings.output_root) / args.command), force=args.force)
        setup_logging(level=args.log_level or settings.log_level, format_type=settings.log_format,
                      log_file=str(out / RUN_LOG), command=args.command, out=str(out))
        logger.info("Command started")
        code = COMMANDS[args.command](args, out)
        logger.info("Command finished", exit_code=code)
        return code
    except NestAttnException as e:
        log_error(e, {"command": args.command}, logger)
        print(f"nestattn: {e.message}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
