"""Command-line entry point tying the pipeline together.

Commands: corpus build, mapping build|report, train-ae, train, sample,
distill, train-sr, upscale, eval. Every training command writes a JSON-lines
run log (step, loss, wall time) and the resolved config next to its outputs.
The output root comes from --out, the config's out_dir, or $GLYPHSYNTH_OUT.

Exit codes: 0 success, 1 invalid arguments/config or runtime failure,
2 missing input artifact (the message names the path).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import (
    CodecConfig,
    CodecTrainConfig,
    codec_checkpoint_payload,
    codec_from_checkpoint,
    make_codec,
    train_autoencoder,
)
from .conditioning import ConditionBundle, ConditionerConfig
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .corpus import (
    CorpusConfig,
    CorpusError,
    build_corpus,
    load_real_corpus,
    manifest_from_json,
    manifest_to_json,
)
from .data import RenderCache
from .denoiser import (
    BatchBuilder,
    DenoiserConfig,
    GlyphDenoiser,
    TrainConfig,
    ema_model,
    model_checkpoint_extra,
    model_from_checkpoint,
    sample,
    train_denoiser,
)
from .distill import DistillConfig, StudentModel, distill, student_sample
from .io import load_png, save_png
from .mapping import (
    MappingError,
    ReferenceMappings,
    SelectionPolicy,
    build_mapping,
    coverage_report,
    select_references,
)
from .codec import CodecError
from .conditioning import ConditioningError
from .denoiser import DenoiserError
from .distill import DistillError
from .metrics import ClassifierConfig, GlyphClassifier, MetricError, metric_report, train_classifier
from .schedule import ScheduleError
from .superres import SRError
from .schedule import NoiseSchedule, make_schedule, select_timesteps_trailing
from .seeds import seed_stream, stream_table
from .superres import (
    SRBatchBuilder,
    SRStage,
    SRStageConfig,
    SRTrainConfig,
    cascade,
    train_sr,
    upscale,
)


class CliError(RuntimeError):
    exit_code = 1


class MissingArtifact(CliError):
    exit_code = 2


def _out_root(cfg: RunConfig, args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("GLYPHSYNTH_OUT")
    if env:
        return Path(env) / Path(cfg.out_dir).name
    return Path(cfg.out_dir)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, args.set or [])


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


def _load_manifest(root: Path):
    return manifest_from_json(_require(root / "corpus" / "manifest.json", "corpus manifest").read_text())


def _schedule_for(cfg: RunConfig) -> NoiseSchedule:
    return make_schedule(cfg.schedule.T, cfg.schedule.kind)


def _policy_for(cfg: RunConfig) -> SelectionPolicy:
    p = cfg.policy
    return SelectionPolicy(k=p.k, p=p.p, p_hat=p.p_hat,
                           one_shot_phase_fraction=p.one_shot_phase_fraction)


def _codec_for(cfg: RunConfig, root: Path, images=None):
    ckpt = root / "codec.ckpt"
    if ckpt.exists():
        manifest, state = load_checkpoint(ckpt)
        return codec_from_checkpoint(manifest, state)
    codec = make_codec(CodecConfig(kind=cfg.codec.kind, f=cfg.codec.f,
                                   latent_channels=cfg.codec.latent_channels,
                                   base_width=cfg.codec.base_width))
    if images is not None:
        codec.fit_standardization(images)
    return codec


def _save_codec(cfg: RunConfig, codec, root: Path):
    state, extra = codec_checkpoint_payload(
        codec, CodecConfig(kind=cfg.codec.kind, f=cfg.codec.f,
                           latent_channels=cfg.codec.latent_channels,
                           base_width=cfg.codec.base_width))
    save_checkpoint(root / "codec.ckpt", "codec", state, extra=extra)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_corpus_build(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man = build_corpus(cfg.corpus)
    (root / "corpus").mkdir(parents=True, exist_ok=True)
    (root / "corpus" / "manifest.json").write_text(manifest_to_json(man))
    cfg.write_json_mirror(root)
    (root / "seed_streams.json").write_text(json.dumps(stream_table(cfg.seed)))
    print(f"corpus: {len(man.glyphs)} glyphs ({len(man.ref_chars)} reference), "
          f"{len(man.styles)} styles -> {root / 'corpus'}")
    return 0


def cmd_mapping_build(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man = _load_manifest(root)
    refs = json.loads(_require(Path(args.refs), "reference list").read_text()) \
        if args.refs else list(man.ref_chars)
    mapping = build_mapping(args.level, man.decomp_table(), refs)
    out = root / f"mapping_{args.level}.json"
    out.write_text(mapping.to_json())
    print(f"mapping[{args.level}]: {len(mapping.entries)} entries -> {out}")
    return 0


def cmd_mapping_report(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man = _load_manifest(root)
    refs = json.loads(_require(Path(args.refs), "reference list").read_text()) \
        if args.refs else list(man.ref_chars)
    stats = coverage_report(refs, man.decomp_table())
    print(stats.to_json())
    return 0


def cmd_train_ae(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man = _load_manifest(root)
    cache = RenderCache(man)
    images, _, _ = cache.stack(man.train_chars, man.train_styles, cfg.resolution)
    log = _jsonl_logger(root / "logs" / "train_ae.jsonl")
    codec, history = train_autoencoder(
        images,
        CodecConfig(kind=cfg.codec.kind, f=cfg.codec.f,
                    latent_channels=cfg.codec.latent_channels,
                    base_width=cfg.codec.base_width, seed=cfg.seed),
        CodecTrainConfig(steps=cfg.codec.train_steps, batch_size=cfg.codec.batch_size,
                         lr=cfg.codec.lr, seed=cfg.seed),
        log=log,
    )
    _save_codec(cfg, codec, root)
    cfg.write_json_mirror(root)
    final = history[-1]["holdout_mae"] if history else 0.0
    print(f"codec[{cfg.codec.kind}] trained; holdout MAE {final:.4f} -> {root / 'codec.ckpt'}")
    return 0


def _jsonl_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)

    def log(rec):
        with open(path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")

    return log


def _stage_a_pieces(cfg: RunConfig, root: Path):
    man = _load_manifest(root)
    cache = RenderCache(man)
    render_cache_path = root / "render_cache.npz"
    if render_cache_path.exists():
        cache.load(render_cache_path)
    images, _, _ = cache.stack(man.train_chars, man.train_styles, cfg.resolution)
    codec = _codec_for(cfg, root, images)
    maps = ReferenceMappings.build(man.decomp_table(), man.ref_chars)
    policy = _policy_for(cfg)
    policy.validate_against(man.decomp_table())
    return man, cache, codec, maps, policy


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man, cache, codec, maps, policy = _stage_a_pieces(cfg, root)
    schedule = _schedule_for(cfg)
    (root / "schedule.json").write_text(schedule.to_json())
    model = GlyphDenoiser(
        DenoiserConfig(latent_hw=cfg.resolution // codec.f,
                       latent_channels=codec.latent_channels,
                       widths=tuple(cfg.model.widths), cond_dim=cfg.model.cond_dim,
                       cond_proj_channels=cfg.model.cond_proj_channels,
                       temb_dim=cfg.model.temb_dim, seed=cfg.seed),
        ConditionerConfig(resolution=cfg.resolution, k=policy.k,
                          d=cfg.model.cond_dim, seed=cfg.seed),
    )
    tc = TrainConfig(steps=cfg.train.steps, batch_size=cfg.train.batch_size,
                     lr=cfg.train.lr, ema_decay=cfg.train.ema_decay,
                     augment_prob=cfg.train.augment_prob, seed=cfg.seed,
                     log_every=cfg.train.log_every)
    builder = BatchBuilder(man, cache, maps, policy, codec, cfg.resolution, tc)
    ema, _ = train_denoiser(model, builder, schedule, tc,
                            log_path=root / "logs" / "train.jsonl",
                            progress=lambda r: print(f"step {r['step']} loss {r['loss']:.4f}"))
    save_checkpoint(root / "model.ckpt", "denoiser", model.state_arrays(),
                    extra=model_checkpoint_extra(model))
    save_checkpoint(root / "ema.ckpt", "denoiser_ema", ema.state_arrays(),
                    extra=model_checkpoint_extra(model))
    _save_codec(cfg, codec, root)
    cache.save(root / "render_cache.npz")
    cfg.write_json_mirror(root)
    print(f"stage A trained -> {root / 'model.ckpt'}, EMA -> {root / 'ema.ckpt'}")
    return 0


def _sampling_pieces(cfg: RunConfig, root: Path, which: str = "ema.ckpt"):
    man = _load_manifest(root)
    manifest, state = load_checkpoint(_require(root / which, "model checkpoint"))
    model = model_from_checkpoint(manifest, state)
    cman, cstate = load_checkpoint(_require(root / "codec.ckpt", "codec checkpoint"))
    codec = codec_from_checkpoint(cman, cstate)
    schedule = NoiseSchedule.from_json(_require(root / "schedule.json", "schedule").read_text())
    return man, model, codec, schedule


def _reference_images(args, man, cache, style_id: int, resolution: int):
    """Reference images either rendered from the manifest (synthetic path) or
    loaded from a directory of <charid>_<styleid>.png files."""
    if args.refs and Path(args.refs).is_dir():
        images, decomp = load_real_corpus(args.refs)
        ref_imgs = {}
        for (cid, _sid), img in images.items():
            px = img.pixels
            if px.ndim == 3:
                px = px.mean(axis=2)
            ref_imgs[cid] = px.astype(np.float32)
        return ref_imgs, decomp
    ref_ids = list(man.ref_chars)
    if args.refs:
        ref_ids = json.loads(_require(Path(args.refs), "reference list").read_text())
    ref_imgs = {int(r): cache.glyph(int(r), style_id, resolution) for r in ref_ids}
    return ref_imgs, man.decomp_table()


def cmd_sample(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man, model, codec, schedule = _sampling_pieces(cfg, root)
    cache = RenderCache(man)
    chars = [int(c) for c in args.chars.split(",")]
    style_id = args.style if args.style is not None else man.test_styles[0]
    resolution = model.cond_config.resolution
    ref_imgs, decomp = _reference_images(args, man, cache, style_id, resolution)
    maps = ReferenceMappings.build(decomp, sorted(ref_imgs))
    policy = _policy_for(cfg)
    rng = seed_stream(args.seed, "diffusion")
    sel_rng = seed_stream(args.seed, "selection")
    bundles = []
    for cid in chars:
        refs = select_references(cid, maps, policy, "normal", sel_rng)
        bundles.append(ConditionBundle(
            content=cache.content(cid, resolution),
            styles=np.stack([ref_imgs[r] for r in refs]),
        ))
    plan = select_timesteps_trailing(schedule.T, args.steps)
    images = sample(model, bundles, plan, schedule, codec, rng,
                    s_c=args.scale_c, s_s=args.scale_s)
    out_dir = Path(args.samples_out or (root / "samples"))
    out_dir.mkdir(parents=True, exist_ok=True)
    from .corpus import GlyphImage

    for cid, img in zip(chars, images):
        save_png(GlyphImage(img.astype(np.float32), img.shape[0], cid, style_id),
                 out_dir / f"{cid}_{style_id}.png")
    grid = _tile(images)
    save_png(GlyphImage(grid, grid.shape[0], -1, style_id), out_dir / "grid.png")
    cfg.write_json_mirror(out_dir)
    print(f"wrote {len(chars)} glyphs + grid.png -> {out_dir}")
    return 0


def _tile(images: np.ndarray) -> np.ndarray:
    n = len(images)
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    hw = images.shape[1]
    grid = np.zeros((rows * hw, cols * hw), np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * hw : (r + 1) * hw, c * hw : (c + 1) * hw] = img
    return grid


def cmd_distill(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    teacher_path = Path(args.teacher) if args.teacher else root / "ema.ckpt"
    manifest, state = load_checkpoint(_require(teacher_path, "teacher checkpoint"))
    teacher = model_from_checkpoint(manifest, state)
    man, cache, codec, maps, policy = _stage_a_pieces(cfg, root)
    schedule = _schedule_for(cfg)
    dc = DistillConfig(steps=cfg.distill.steps, batch_size=cfg.distill.batch_size,
                       lr=cfg.distill.lr, s_c=cfg.sampler.scale_c,
                       s_s=cfg.sampler.scale_s, seed=cfg.seed,
                       log_every=cfg.distill.log_every)
    tc = TrainConfig(steps=1, batch_size=dc.batch_size, seed=cfg.seed,
                     augment_prob=cfg.train.augment_prob)
    builder = BatchBuilder(man, cache, maps, policy, codec, cfg.resolution, tc)
    student, _ = distill(teacher, builder, schedule, dc,
                         log_path=root / "logs" / "distill.jsonl",
                         progress=lambda r: print(f"step {r['step']} loss {r['loss']:.5f}"))
    out = Path(args.student_out or (root / "student.ckpt"))
    state = dict(student.unet.state_arrays())
    state.update({f"conditioner.{k}": v for k, v in student.conditioner.state_arrays().items()})
    save_checkpoint(out, "student", state,
                    extra={**model_checkpoint_extra(teacher), "fixed_t": schedule.T})
    cfg.write_json_mirror(root)
    print(f"student (fixed_t={schedule.T}) -> {out}")
    return 0


def load_student(path: Path) -> StudentModel:
    from .denoiser import UNet

    manifest, state = load_checkpoint(path)
    uc = dict(manifest["unet_config"])
    uc["widths"] = tuple(uc["widths"])
    from .conditioning import Conditioner

    unet = UNet(DenoiserConfig(**uc))
    cond = Conditioner(ConditionerConfig(**manifest["cond_config"]))
    unet.load_state_arrays({k: v for k, v in state.items() if not k.startswith("conditioner.")})
    cond.load_state_arrays({k[len("conditioner."):]: v for k, v in state.items()
                            if k.startswith("conditioner.")})
    return StudentModel(unet, cond, int(manifest["fixed_t"]), DenoiserConfig(**uc),
                        ConditionerConfig(**manifest["cond_config"]))


def cmd_train_sr(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    man = _load_manifest(root)
    cache = RenderCache(man)
    src = args.from_res or cfg.sr.source_resolution
    dst = args.to_res or cfg.sr.target_resolution
    stage = SRStage(SRStageConfig(source_resolution=src, target_resolution=dst,
                                  seed=cfg.seed))
    imgs_hi, _, _ = cache.stack(man.train_chars, man.train_styles, dst)
    stage.fit_standardization(imgs_hi)
    if args.init:
        manifest, state = load_checkpoint(_require(Path(args.init), "stage-A checkpoint"))
        copied, fresh = stage.init_from_stage_a(state)
        print(f"initialized {len(copied)} shared parameters; {len(fresh)} fresh")
    maps = ReferenceMappings.build(man.decomp_table(), man.ref_chars)
    policy = _policy_for(cfg)
    schedule = _schedule_for(cfg)
    sc = SRTrainConfig(steps=cfg.sr.steps, batch_size=cfg.sr.batch_size, lr=cfg.sr.lr,
                       seed=cfg.seed, log_every=cfg.sr.log_every)
    builder = SRBatchBuilder(man, cache, maps, policy, stage, sc)
    ema, _ = train_sr(stage, builder, schedule, sc,
                      log_path=root / "logs" / f"train_sr_{src}_{dst}.jsonl",
                      progress=lambda r: print(f"step {r['step']} loss {r['loss']:.4f}"))
    out = root / f"sr_{src}_{dst}.ckpt"
    save_checkpoint(out, "sr_denoiser", ema.state_arrays(),
                    extra={**model_checkpoint_extra(stage.model),
                           "source_resolution": src, "target_resolution": dst,
                           "latent_shift": stage.codec.latent_shift,
                           "latent_scale": stage.codec.latent_scale})
    cfg.write_json_mirror(root)
    print(f"SR stage {src}->{dst} -> {out}")
    return 0


def load_sr_stage(path: Path) -> SRStage:
    manifest, state = load_checkpoint(path)
    stage = SRStage(SRStageConfig(source_resolution=int(manifest["source_resolution"]),
                                  target_resolution=int(manifest["target_resolution"])))
    stage.model.load_state_arrays(state)
    stage.codec.latent_shift = float(manifest["latent_shift"])
    stage.codec.latent_scale = float(manifest["latent_scale"])
    return stage


def cmd_upscale(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    src = args.from_res or cfg.sr.source_resolution
    dst = args.to_res or cfg.sr.target_resolution
    stage = load_sr_stage(_require(root / f"sr_{src}_{dst}.ckpt", "SR checkpoint"))
    man = _load_manifest(root)
    cache = RenderCache(man)
    schedule = _schedule_for(cfg)
    in_path = _require(Path(args.inputs), "input image(s)")
    files = sorted(in_path.glob("*.png")) if in_path.is_dir() else [in_path]
    if not files:
        raise MissingArtifact(f"missing input PNGs under {in_path}")
    lows, names = [], []
    for f in files:
        img = load_png(f)
        px = img.pixels if img.pixels.ndim == 2 else img.pixels.mean(axis=2)
        if px.shape[0] != src:
            if in_path.is_dir():
                print(f"skipping {f.name}: {px.shape[0]}px, stage expects {src}px")
                continue
            raise CliError(f"{f} is {px.shape[0]}px, expected {src}px")
        lows.append(px.astype(np.float32))
        names.append(f.stem)
    if not lows:
        raise MissingArtifact(f"missing {src}px input PNGs under {in_path}")
    style_id = args.style if args.style is not None else man.test_styles[0]
    ref_imgs, decomp = _reference_images(args, man, cache, style_id, dst)
    maps = ReferenceMappings.build(decomp, sorted(ref_imgs))
    policy = _policy_for(cfg)
    sel_rng = seed_stream(args.seed, "selection")
    rng = seed_stream(args.seed, "sr")
    refs_hi = []
    for name in names:
        cid = int(name.split("_")[0]) if name.split("_")[0].lstrip("-").isdigit() else None
        if cid is not None and (cid, 0) in maps.component.entries:
            ids = select_references(cid, maps, policy, "normal", sel_rng)
        else:
            pool = sorted(ref_imgs)
            ids = [pool[int(sel_rng.integers(len(pool)))] for _ in range(policy.k)]
        refs_hi.append(np.stack([ref_imgs[r] for r in ids]))
    plan = select_timesteps_trailing(schedule.T, args.steps)
    out_imgs = upscale(stage, np.stack(lows), np.stack(refs_hi), plan, schedule, rng,
                       s_c=args.scale_c, s_s=args.scale_s)
    out_dir = Path(args.samples_out or (root / f"upscaled_{dst}"))
    out_dir.mkdir(parents=True, exist_ok=True)
    from .corpus import GlyphImage

    for name, img in zip(names, out_imgs):
        save_png(GlyphImage(img.astype(np.float32), img.shape[0], -1, style_id),
                 out_dir / f"{name}.png")
    print(f"upscaled {len(names)} images -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    root = _out_root(cfg, args)
    gen_dir = _require(Path(args.gen), "generated image directory")
    gt_dir = _require(Path(args.gt), "ground-truth image directory")

    def load_dir(d: Path):
        out = {}
        for f in sorted(d.glob("*.png")):
            parts = f.stem.split("_")
            if len(parts) != 2:
                continue
            img = load_png(f)
            px = img.pixels if img.pixels.ndim == 2 else img.pixels.mean(axis=2)
            out[(int(parts[0]), int(parts[1]))] = px.astype(np.float32)
        return out

    gen, gt = load_dir(gen_dir), load_dir(gt_dir)
    keys = sorted(set(gen) & set(gt))
    if not keys:
        raise CliError("no aligned <charid>_<styleid>.png pairs between the directories")
    if not (root / "char_clf.ckpt").exists() or not (root / "style_clf.ckpt").exists():
        _train_eval_classifiers(cfg, root)
    char_clf = _load_classifier(_require(root / "char_clf.ckpt", "character classifier"))
    style_clf = _load_classifier(_require(root / "style_clf.ckpt", "style classifier"))
    char_map = char_clf.label_map
    style_map = style_clf.label_map
    res = char_clf.config.resolution
    from .corpus import area_downsample

    def to_res(px):
        if px.shape[0] == res:
            return px
        if px.shape[0] % res == 0:
            return area_downsample(px, px.shape[0] // res).astype(np.float32)
        raise CliError(f"image resolution {px.shape[0]} incompatible with classifier ({res})")

    gen_stack = np.stack([to_res(gen[k]) for k in keys])
    gt_stack = np.stack([to_res(gt[k]) for k in keys])
    y_char = np.array([char_map[str(k[0])] for k in keys])
    y_style = np.array([style_map[str(k[1])] for k in keys])
    report = metric_report(gen_stack, gt_stack, y_char, y_style, char_clf, style_clf)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_json())
    print(report.to_json())
    return 0


def _train_eval_classifiers(cfg: RunConfig, root: Path, steps: int = 2500):
    """Corpus-trained character and style classifiers for the eval command,
    cached as checkpoints in the run directory."""
    man = _load_manifest(root)
    cache = RenderCache(man)
    all_chars = sorted(man.glyphs)
    imgs, cids, sids = cache.stack(all_chars, sorted(man.styles), cfg.resolution)
    char_map = {c: i for i, c in enumerate(all_chars)}
    style_map = {s: i for i, s in enumerate(sorted(man.styles))}
    y_char = np.array([char_map[c] for c in cids])
    y_style = np.array([style_map[s] for s in sids])
    char_clf, _ = train_classifier(
        ClassifierConfig(kind="character", n_classes=len(char_map),
                         resolution=cfg.resolution, steps=steps, seed=cfg.seed),
        imgs, y_char)
    style_clf, _ = train_classifier(
        ClassifierConfig(kind="style", n_classes=len(style_map),
                         resolution=cfg.resolution, steps=steps, seed=cfg.seed + 1),
        imgs, y_style)
    save_classifier(root / "char_clf.ckpt", char_clf, char_map)
    save_classifier(root / "style_clf.ckpt", style_clf, style_map)


def save_classifier(path: Path, clf: GlyphClassifier, label_map: dict):
    save_checkpoint(path, f"classifier_{clf.config.kind}", clf.state_arrays(),
                    extra={"clf_config": asdict(clf.config),
                           "label_map": {str(k): int(v) for k, v in label_map.items()}})


def _load_classifier(path: Path) -> GlyphClassifier:
    manifest, state = load_checkpoint(path)
    clf = GlyphClassifier(ClassifierConfig(**manifest["clf_config"]))
    clf.load_state_arrays(state)
    clf.label_map = manifest["label_map"]
    return clf


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glyphsynth",
                                 description="few-shot glyph synthesis pipeline")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run config")
        p.add_argument("--out", help="output root (overrides config out_dir)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (section.key=value)")

    p = sub.add_parser("corpus", help="corpus operations")
    csub = p.add_subparsers(dest="subcommand", required=True)
    pb = csub.add_parser("build", help="build the synthetic corpus manifest")
    common(pb)
    pb.set_defaults(func=cmd_corpus_build)

    p = sub.add_parser("mapping", help="reference-mapping operations")
    msub = p.add_subparsers(dest="subcommand", required=True)
    pb = msub.add_parser("build", help="emit a character-reference mapping as JSON")
    common(pb)
    pb.add_argument("--level", choices=["component", "stroke"], required=True)
    pb.add_argument("--refs", help="JSON file listing reference char ids")
    pb.set_defaults(func=cmd_mapping_build)
    pr = msub.add_parser("report", help="coverage statistics for a reference set")
    common(pr)
    pr.add_argument("--refs", help="JSON file listing reference char ids")
    pr.set_defaults(func=cmd_mapping_report)

    pb = sub.add_parser("train-ae", help="train the latent codec")
    common(pb)
    pb.set_defaults(func=cmd_train_ae)

    pb = sub.add_parser("train", help="train the stage-A denoiser")
    common(pb)
    pb.set_defaults(func=cmd_train)

    pb = sub.add_parser("sample", help="generate glyphs with the trained model")
    common(pb)
    pb.add_argument("--chars", required=True, help="comma-separated char ids")
    pb.add_argument("--refs", help="reference list JSON or directory of PNGs")
    pb.add_argument("--style", type=int, help="style id for synthetic references")
    pb.add_argument("--steps", type=int, default=10)
    pb.add_argument("--scale-c", dest="scale_c", type=float, default=2.0)
    pb.add_argument("--scale-s", dest="scale_s", type=float, default=2.0)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--samples-out", help="directory for the PNGs")
    pb.set_defaults(func=cmd_sample)

    pb = sub.add_parser("distill", help="distill the one-step student")
    common(pb)
    pb.add_argument("--teacher", help="teacher checkpoint (default: <run>/ema.ckpt)")
    pb.add_argument("--student-out", dest="student_out", help="output checkpoint path")
    pb.set_defaults(func=cmd_distill)

    pb = sub.add_parser("train-sr", help="train a super-resolution stage")
    common(pb)
    pb.add_argument("--from", dest="from_res", type=int, help="source resolution")
    pb.add_argument("--to", dest="to_res", type=int, help="target resolution")
    pb.add_argument("--init", help="stage-A checkpoint for weight initialization")
    pb.set_defaults(func=cmd_train_sr)

    pb = sub.add_parser("upscale", help="run a trained SR stage on PNGs")
    common(pb)
    pb.add_argument("--in", dest="inputs", required=True, help="PNG file or directory")
    pb.add_argument("--refs", help="reference list JSON or directory of PNGs")
    pb.add_argument("--style", type=int)
    pb.add_argument("--from", dest="from_res", type=int)
    pb.add_argument("--to", dest="to_res", type=int)
    pb.add_argument("--steps", type=int, default=10)
    pb.add_argument("--scale-c", dest="scale_c", type=float, default=2.0)
    pb.add_argument("--scale-s", dest="scale_s", type=float, default=2.0)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--samples-out", help="directory for the PNGs")
    pb.set_defaults(func=cmd_upscale)

    pb = sub.add_parser("eval", help="metric report over generated vs ground truth")
    common(pb)
    pb.add_argument("--gen", required=True)
    pb.add_argument("--gt", required=True)
    pb.add_argument("--report", required=True, help="output JSON path")
    pb.set_defaults(func=cmd_eval)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CliError, ConfigError, CorpusError, MappingError, CheckpointError,
            MetricError, CodecError, ScheduleError, ConditioningError,
            DenoiserError, DistillError, SRError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
