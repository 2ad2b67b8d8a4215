"""
Command-line surface: argument parser and one handler per command.

Every command resolves its configuration first (preset < --config file < flags)
and writes the resolved config into its run directory before doing any work.
"""
import argparse
import json
import logging
import os
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from analysis.decomposition import DecompositionSpec, concept_builder, decompose_timestep
from analysis.style_mixing import StyleMixSpec, style_mix
from analysis.truncation_sweep import truncation_sweep
from config.errors import ConfigError
from config.schema import RunConfig, resolve_config
from diffusion.conditioning import plain_conditioning
from diffusion.sampler import sample_image
from evaluation.features import FrozenFeatureExtractor
from evaluation.metrics import (
    image_similarity, mapper_output_norms, norm_stats, prompt_adherence, prompt_attributes, write_metrics,
)
from evaluation.probe import AttributeProbe, train_probe
from mapper.concept import MapperConcept, init_concept, load_concept, save_concept
from mapper.neural_mapper import param_count
from persistence.corpus import (
    generate_concept, generate_corpus, load_concept_images, load_corpus, save_concept_images, save_corpus,
)
from persistence.images import image_grid, mean_pixel_distance, write_ppm
from persistence.run_files import sha256_file, write_csv_atomic, write_json_atomic
from persistence.weights import encoded_size
from training.bundle import WEIGHTS_FILE, GeneratorBundle
from training.inversion import ConceptDataset, invert_concept
from training.pretrain import pretrain_generator
from visualization.plots import plot_loss_trace, plot_sweep

logger = logging.getLogger(__name__)

DEFAULT_RUNS_DIR = "runs"
CONFIG_FLAGS = ("preset", "seed", "steps", "mode", "alpha", "truncation", "guidance", "prompt",
                "fixed_t", "mix_start_t", "geometry_layers", "ks", "corpus_size", "debug")
BASELINE_TOKENS = ("red", "green", "blue", "yellow", "circle", "square", "triangle", "cross")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=["toy", "paper"], default=None, help="size preset (default toy)")
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--out", type=Path, default=None, help="run directory")


def _sampling(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bundle", type=Path, required=True, help="pretrained generator directory")
    parser.add_argument("--prompt", default=None)
    parser.add_argument("--guidance", type=float, default=None)
    parser.add_argument("--truncation", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None)


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neti", description="Space-time concept mapper on a toy diffusion model")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the procedural corpus, the concept set and the attribute probe")
    _common(p)
    p.add_argument("--corpus-size", type=int, default=None)

    p = sub.add_parser("pretrain", help="pretrain and freeze the toy generator")
    _common(p)
    p.add_argument("--data-dir", type=Path, default=None, help="corpus directory from gen-data")
    p.add_argument("--corpus-size", type=int, default=None)

    p = sub.add_parser("invert", help="fit a concept against a frozen generator")
    _common(p)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--concept-dir", type=Path, default=None)
    p.add_argument("--mode", default=None,
                   choices=["neti", "neti_bypass", "ti_baseline", "ablate_no_time", "ablate_no_space", "ablate_neither"])
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--debug", action="store_true", default=None, help="assert zero generator gradients every step")

    p = sub.add_parser("sample", help="sample images")
    _common(p)
    _sampling(p)
    p.add_argument("--mapper", type=Path, default=None, help="concept weights from invert")
    p.add_argument("--num-samples", type=int, default=1)

    p = sub.add_parser("analyze", help="decomposition, truncation sweep or style mixing")
    kinds = p.add_subparsers(dest="analysis", required=True)
    d = kinds.add_parser("decompose", help="sample with the concept fixed at one timestep")
    _common(d)
    _sampling(d)
    d.add_argument("--mapper", type=Path, required=True)
    d.add_argument("--fixed-t", type=int, default=None)
    s = kinds.add_parser("sweep", help="inference-time truncation sweep")
    _common(s)
    _sampling(s)
    s.add_argument("--mapper", type=Path, required=True)
    s.add_argument("--ks", type=int, nargs="+", default=None)
    s.add_argument("--concept-dir", type=Path, default=None, help="reference images for scoring")
    s.add_argument("--samples-per-k", type=int, default=1)
    m = kinds.add_parser("mix", help="geometry/appearance style mixing")
    _common(m)
    _sampling(m)
    m.add_argument("--mapper", type=Path, required=True, help="geometry concept")
    m.add_argument("--appearance-mapper", type=Path, required=True)
    m.add_argument("--mix-start-t", type=int, default=None)
    m.add_argument("--geometry-layers", type=int, nargs="*", default=None)
    m.add_argument("--concept-dir", type=Path, default=None, help="geometry reference images for scoring")

    p = sub.add_parser("eval", help="similarity, prompt adherence and norm statistics")
    _common(p)
    _sampling(p)
    p.add_argument("--mapper", type=Path, required=True)
    p.add_argument("--concept-dir", type=Path, default=None)
    p.add_argument("--probe", type=Path, default=None, help="attribute probe from gen-data")
    p.add_argument("--num-samples", type=int, default=4)

    p = sub.add_parser("info", help="parameter count and weight-file size of the mapper")
    _common(p)
    p.add_argument("--mode", default=None,
                   choices=["neti", "neti_bypass", "ti_baseline", "ablate_no_time", "ablate_no_space", "ablate_neither"])
    p.add_argument("--bypass", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--keep-units", type=int, default=None, help="report the count after pruning to K hidden units")
    return parser


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def command_name(args: argparse.Namespace) -> str:
    return f"analyze-{args.analysis}" if args.command == "analyze" else args.command


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {name: getattr(args, name) for name in CONFIG_FLAGS if hasattr(args, name)}
    return resolve_config(flags, args.config, command=args.command)


def run_directory(args: argparse.Namespace, cfg: RunConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    runs = Path(os.environ.get("NETI_RUNS_DIR", DEFAULT_RUNS_DIR))
    return runs / f"{command_name(args)}-seed{cfg.seed}"


def _input_hashes(args: argparse.Namespace) -> Dict[str, str]:
    hashes = {}
    for name in ("bundle", "mapper", "appearance_mapper", "probe"):
        path = getattr(args, name, None)
        if path is None:
            continue
        target = Path(path) / WEIGHTS_FILE if Path(path).is_dir() else Path(path)
        if target.exists():
            hashes[name] = sha256_file(target)
    for name, index in (("data_dir", "captions.csv"), ("concept_dir", "concept.csv")):
        path = getattr(args, name, None)
        if path is not None and (Path(path) / index).exists():
            hashes[name] = sha256_file(Path(path) / index)
    return hashes


def record_run(run_dir: Path, args: argparse.Namespace, cfg: RunConfig, argv: List[str]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json_atomic(run_dir / "config.json", {
        "command": command_name(args),
        "argv": argv,
        "config": cfg.model_dump(),
        "inputs": _input_hashes(args),
    })


def _load_bundle(args, cfg: RunConfig) -> GeneratorBundle:
    bundle = GeneratorBundle.load(args.bundle)
    if bundle.num_layers != cfg.model.num_layers or bundle.encoder.embed_dim != cfg.model.embed_dim:
        raise ConfigError(
            f"bundle has L={bundle.num_layers}, D={bundle.encoder.embed_dim}; "
            f"config asks for L={cfg.model.num_layers}, D={cfg.model.embed_dim}"
        )
    return bundle


def _load_concept(path: Path, bundle: GeneratorBundle):
    return load_concept(path, bundle.encoder.token_embedding)


def _concept_images(args, cfg: RunConfig):
    directory = getattr(args, "concept_dir", None)
    if directory is not None:
        return load_concept_images(directory)
    return generate_concept(cfg.seed)


def _save_images(directory: Path, stem: str, images: List[np.ndarray]) -> None:
    for i, image in enumerate(images):
        write_ppm(directory / f"{stem}_{i:02d}.ppm", image)
    write_ppm(directory / f"{stem}_grid.ppm", image_grid(images))


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

def handle_gen_data(args, cfg: RunConfig, run_dir: Path) -> int:
    corpus = generate_corpus(cfg.seed, cfg.pretrain.corpus_size)
    save_corpus(run_dir / "corpus", corpus)
    save_concept_images(run_dir / "concept", generate_concept(cfg.seed))
    probe = train_probe(corpus, FrozenFeatureExtractor(), seed=cfg.seed)
    probe.save(run_dir / "weights" / "probe.neti")
    write_metrics(run_dir / "metrics.csv", run_dir.name,
                  {f"probe_accuracy_{attr}": acc for attr, acc in probe.accuracy.items()})
    print(f"corpus of {len(corpus)} images written to {run_dir / 'corpus'}")
    return 0


def handle_pretrain(args, cfg: RunConfig, run_dir: Path) -> int:
    if args.data_dir is not None:
        corpus = load_corpus(args.data_dir, seed=cfg.seed)
    else:
        corpus = generate_corpus(cfg.seed, cfg.pretrain.corpus_size)
    bundle, trace = pretrain_generator(corpus, cfg.model, cfg.pretrain, cfg.seed)
    bundle.save(run_dir / "weights" / "bundle")
    trace.export_csv(run_dir / "trace.csv")
    if len(trace):
        plot_loss_trace(run_dir / "trace.csv", title="Generator pretraining loss")
        write_metrics(run_dir / "metrics.csv", run_dir.name, {"final_smoothed_loss": trace.final_smoothed})
    print(f"bundle {bundle.metadata['hash'][:12]} written to {run_dir / 'weights' / 'bundle'}")
    return 0


def handle_invert(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    dataset = ConceptDataset.from_concept_images(_concept_images(args, cfg), cfg.train.super_category)
    result = invert_concept(bundle, dataset, cfg.model, cfg.train, cfg.seed,
                            checkpoint_dir=run_dir / "weights" / "checkpoints")
    save_concept(run_dir / "weights" / "concept.neti", result.concept, cfg.model, cfg.train)
    result.trace.export_csv(run_dir / "trace.csv")
    if len(result.trace):
        plot_loss_trace(run_dir / "trace.csv", title=f"Inversion loss ({cfg.train.mode})")
        write_metrics(run_dir / "metrics.csv", run_dir.name, {"final_smoothed_loss": result.trace.final_smoothed})
    print(f"concept written to {run_dir / 'weights' / 'concept.neti'}")
    return 0


def _builder_for(bundle: GeneratorBundle, concept, cfg: RunConfig):
    tokens = bundle.tokenize(cfg.sample.prompt)
    if concept is None:
        cond = plain_conditioning(bundle.encoder, tokens, bundle.num_layers)
        return lambda t: cond
    return concept_builder(bundle, concept, cfg.sample.prompt, cfg.sample.truncation, cfg.train.alpha)


def handle_sample(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    concept = _load_concept(args.mapper, bundle) if args.mapper is not None else None
    images = []
    for j in range(args.num_samples):
        builder = _builder_for(bundle, concept, cfg)
        images.append(sample_image(bundle, builder, cfg.sample.steps, cfg.sample.guidance, cfg.seed + j))
    _save_images(run_dir / "samples", f"sample_seed{cfg.seed}", images)
    print(f"{len(images)} samples written to {run_dir / 'samples'}")
    return 0


def handle_decompose(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    concept = _load_concept(args.mapper, bundle)
    s = cfg.sample
    full = sample_image(bundle, _builder_for(bundle, concept, cfg), s.steps, s.guidance, cfg.seed)
    spec = DecompositionSpec(cfg.analysis.fixed_t)
    fixed = decompose_timestep(bundle, concept, spec, s.prompt, cfg.seed, s.steps, s.guidance,
                               s.truncation, cfg.train.alpha)
    _save_images(run_dir / "samples", f"decompose_t{spec.fixed_t}", [full, fixed])
    distance = mean_pixel_distance(full, fixed)
    write_csv_atomic(run_dir / "decompose.csv", ["t", "score"], [{"t": spec.fixed_t, "score": distance}])
    print(f"t={spec.fixed_t}: mean pixel distance to the full sample {distance:.3f}")
    return 0


def handle_sweep(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    concept = _load_concept(args.mapper, bundle)
    refs = _concept_images(args, cfg).images
    s = cfg.sample
    result = truncation_sweep(bundle, concept, s.prompt, cfg.analysis.ks, cfg.seed, s.steps, s.guidance,
                              cfg.train.alpha, reference_images=refs, extractor=FrozenFeatureExtractor(),
                              samples_per_k=args.samples_per_k)
    _save_images(run_dir / "samples", "sweep", result.images)
    write_csv_atomic(run_dir / "sweep.csv", ["k", "score"], result.rows())
    plot_sweep(run_dir / "sweep.csv", x="k", title="Similarity vs. truncation")
    for row in result.rows():
        print(f"k={row['k']}: {row['score']:.4f}")
    return 0


def handle_mix(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    geometry = _load_concept(args.mapper, bundle)
    appearance = _load_concept(args.appearance_mapper, bundle)
    spec = StyleMixSpec(cfg.analysis.geometry_layers, cfg.analysis.mix_start_t, geometry, appearance)
    s = cfg.sample
    image = style_mix(bundle, spec, s.prompt, cfg.seed, s.steps, s.guidance, s.truncation, cfg.train.alpha)
    _save_images(run_dir / "samples", f"mix_t{spec.mix_start_t}", [image])
    row = {"t": spec.mix_start_t, "score": ""}
    if args.concept_dir is not None:
        refs = load_concept_images(args.concept_dir).images
        row["score"] = 1.0 - image_similarity([image], refs, FrozenFeatureExtractor())
    write_csv_atomic(run_dir / "mix.csv", ["t", "score"], [row])
    print(f"style mix from t={spec.mix_start_t} written to {run_dir / 'samples'}")
    return 0


def handle_eval(args, cfg: RunConfig, run_dir: Path) -> int:
    bundle = _load_bundle(args, cfg)
    concept = _load_concept(args.mapper, bundle)
    refs = _concept_images(args, cfg).images
    extractor = FrozenFeatureExtractor()
    s = cfg.sample
    seeds = [cfg.seed + j for j in range(args.num_samples)]

    samples = [sample_image(bundle, _builder_for(bundle, concept, cfg), s.steps, s.guidance, sd) for sd in seeds]
    token = BASELINE_TOKENS[cfg.seed % len(BASELINE_TOKENS)]
    baseline = init_concept(cfg.model, cfg.train.model_copy(update={"mode": "ti_baseline"}),
                            bundle.encoder.token_embedding(token), cfg.seed, bundle.dtype)
    base_samples = [sample_image(bundle, concept_builder(bundle, baseline, s.prompt, None, cfg.train.alpha),
                                 s.steps, s.guidance, sd) for sd in seeds]
    metrics = {
        "image_similarity": image_similarity(samples, refs, extractor),
        "baseline_similarity": image_similarity(base_samples, refs, extractor),
    }
    probe_path = args.probe
    if probe_path is not None:
        probe = AttributeProbe.load(probe_path)
        attrs = prompt_attributes(s.prompt)
        metrics["prompt_adherence"] = prompt_adherence(samples, attrs, probe, extractor)
        metrics["probe_accuracy"] = probe.accuracy_for(list(attrs))
    if isinstance(concept, MapperConcept):
        stats = norm_stats(mapper_output_norms(concept, 1000, cfg.seed))
        metrics.update({"norm_median": stats.median, "norm_min": stats.min, "norm_max": stats.max})
    _save_images(run_dir / "samples", "eval", samples)
    write_metrics(run_dir / "metrics.csv", run_dir.name, metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def handle_info(args, cfg: RunConfig, run_dir: Path) -> int:
    bypass = args.bypass if args.bypass is not None else cfg.train.bypass
    count = param_count(cfg.model, bypass=bypass, keep_units=args.keep_units)
    size = encoded_size(mapper_section_shapes(cfg, bypass, args.keep_units))
    print(f"preset: {cfg.preset}")
    print(f"bypass: {'yes' if bypass else 'no'}")
    if args.keep_units is not None:
        print(f"hidden units kept: {args.keep_units}")
    print(f"parameters: {count}")
    print(f"weight file: {size} bytes ({size / 1e6:.2f} MB)")
    return 0


def mapper_section_shapes(cfg: RunConfig, bypass: bool, keep_units: Optional[int]) -> Dict[str, np.ndarray]:
    """Zero-cost stand-ins with the shapes of every mapper weight section."""
    m = cfg.model
    units = keep_units or m.hidden_dim
    shapes = {
        "pe.W": (m.num_frequencies, 2), "pe.E": (m.num_anchors, 2 * m.num_frequencies),
        "fc1.weight": (m.num_anchors, m.hidden_dim), "fc1.bias": (1, m.hidden_dim),
        "ln1.weight": (1, m.hidden_dim), "ln1.bias": (1, m.hidden_dim),
        "fc2.weight": (m.hidden_dim, m.hidden_dim), "fc2.bias": (1, m.hidden_dim),
        "ln2.weight": (1, m.hidden_dim), "ln2.bias": (1, m.hidden_dim),
        "head_base.weight": (units, m.embed_dim), "head_base.bias": (1, m.embed_dim),
    }
    if bypass:
        shapes.update({"head_pass.weight": (units, m.embed_dim), "head_pass.bias": (1, m.embed_dim)})
    return {name: np.broadcast_to(np.float32(0), shape) for name, shape in shapes.items()}


HANDLERS: Dict[str, Callable] = {
    "gen-data": handle_gen_data,
    "pretrain": handle_pretrain,
    "invert": handle_invert,
    "sample": handle_sample,
    "analyze-decompose": handle_decompose,
    "analyze-sweep": handle_sweep,
    "analyze-mix": handle_mix,
    "eval": handle_eval,
    "info": handle_info,
}
