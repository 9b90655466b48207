#!/usr/bin/env python3
"""End-to-end toy pipeline: corpus, classifiers, stage-A training, one-step
distillation, super-resolution, and the evaluation sweeps the acceptance
tests assert against.

Stages are idempotent: each writes its artifacts under the output root and is
skipped when they already exist. The final summary (acceptance_summary.json)
holds every measured number.

Usage:
    python scripts/run_acceptance_pipeline.py --out artifacts/acceptance
    python scripts/run_acceptance_pipeline.py --out ... --until stage_a
    python scripts/run_acceptance_pipeline.py --out ... --pilot   # small dry run
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from glyphsynth.checkpoint import load_checkpoint, save_checkpoint
from glyphsynth.cli import _load_classifier, load_sr_stage, load_student, save_classifier
from glyphsynth.codec import CodecConfig, make_codec
from glyphsynth.conditioning import ConditionBundle, ConditionerConfig
from glyphsynth.corpus import (
    CorpusConfig,
    area_downsample,
    build_corpus,
    manifest_from_json,
    manifest_to_json,
)
from glyphsynth.data import RenderCache
from glyphsynth.denoiser import (
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
from glyphsynth.distill import DistillConfig, distill, student_generate, student_sample
from glyphsynth.mapping import ReferenceMappings, SelectionPolicy, select_references
from glyphsynth.metrics import (
    ClassifierConfig,
    accuracy,
    fid,
    rmse,
    train_classifier,
)
from glyphsynth.schedule import make_schedule, select_timesteps_trailing
from glyphsynth.seeds import seed_stream
from glyphsynth.superres import (
    SRBatchBuilder,
    SRStage,
    SRStageConfig,
    SRTrainConfig,
    bilinear_upsample,
    train_sr,
    upscale,
)

T = 1000
RESOLUTION = 32
SR_TARGET = 128
SAMPLE_STEPS = 10
SCALES = (2.0, 2.0)


def log(msg: str):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


class Pipeline:
    def __init__(self, root: Path, pilot: bool = False):
        self.root = root
        self.pilot = pilot
        root.mkdir(parents=True, exist_ok=True)
        self.summary_path = root / "acceptance_summary.json"
        self.summary = json.loads(self.summary_path.read_text()) if self.summary_path.exists() else {}
        if pilot:
            self.corpus_cfg = CorpusConfig(n_components=32, n_strokes=8, n_chars=80,
                                           n_styles=12, ref_set_size=20, seed=0)
            self.train_steps, self.distill_steps, self.sr_steps = 2500, 400, 700
            self.clf_steps, self.eval_chars, self.sr_eval_n = 1500, 24, 32
        else:
            self.corpus_cfg = CorpusConfig(n_components=48, n_strokes=8, n_chars=200,
                                           n_styles=30, ref_set_size=40, seed=0)
            self.train_steps, self.distill_steps, self.sr_steps = 14000, 2200, 4500
            self.clf_steps, self.eval_chars, self.sr_eval_n = 3500, 40, 120
        self.schedule = make_schedule(T, "linear")
        self.policy = SelectionPolicy(k=6, p=0.1, p_hat=0.1, one_shot_phase_fraction=0.1)

    # -- persistence helpers ---------------------------------------------------

    def save_summary(self, **kv):
        self.summary.update(kv)
        self.summary_path.write_text(json.dumps(self.summary, indent=1))

    # -- stages -----------------------------------------------------------------

    def stage_corpus(self):
        path = self.root / "corpus" / "manifest.json"
        if path.exists():
            self.manifest = manifest_from_json(path.read_text())
        else:
            log("building corpus")
            self.manifest = build_corpus(self.corpus_cfg)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(manifest_to_json(self.manifest))
        self.cache = RenderCache(self.manifest)
        cache_path = self.root / "render_cache.npz"
        if cache_path.exists():
            self.cache.load(cache_path)
        man = self.manifest
        self.char_map = {c: i for i, c in enumerate(sorted(man.glyphs))}
        self.style_map = {s: i for i, s in enumerate(sorted(man.styles))}
        self.codec = make_codec(CodecConfig(kind="identity"))
        imgs, _, _ = self.cache.stack(man.train_chars, man.train_styles, RESOLUTION)
        self.codec.fit_standardization(imgs)
        self.maps = ReferenceMappings.build(man.decomp_table(), man.ref_chars)
        rng = seed_stream(0, "eval")
        self.eval_char_ids = sorted(
            int(c) for c in rng.choice(man.train_chars, size=self.eval_chars, replace=False))
        self.save_summary(corpus=dict(chars=len(man.glyphs), styles=len(man.styles),
                                      ref=len(man.ref_chars)))

    def stage_classifiers(self):
        man = self.manifest
        jobs = [
            ("char_clf", "character", RESOLUTION, self.char_map, 0),
            ("style_clf", "style", RESOLUTION, self.style_map, 1),
            ("style_clf_hi", "style", SR_TARGET, self.style_map, 2),
        ]
        for name, kind, res, label_map, seed in jobs:
            path = self.root / f"{name}.ckpt"
            if path.exists():
                continue
            log(f"training {name} at {res}px")
            if kind == "character":
                tr_imgs, tr_c, _ = self.cache.stack(sorted(man.glyphs), man.train_styles, res)
                te_imgs, te_c, _ = self.cache.stack(sorted(man.glyphs), man.test_styles, res)
                y_tr = np.array([label_map[c] for c in tr_c])
                y_te = np.array([label_map[c] for c in te_c])
            else:
                styles = sorted(man.styles)
                tr_imgs, _, tr_s = self.cache.stack(man.train_chars, styles, res)
                te_imgs, _, te_s = self.cache.stack(man.test_chars, styles, res)
                y_tr = np.array([label_map[s] for s in tr_s])
                y_te = np.array([label_map[s] for s in te_s])
            steps = self.clf_steps if res == RESOLUTION else max(self.clf_steps // 2, 800)
            batch = 32 if res == RESOLUTION else 12
            clf, _ = train_classifier(
                ClassifierConfig(kind=kind, n_classes=len(label_map), resolution=res,
                                 steps=steps, batch_size=batch, seed=seed),
                tr_imgs, y_tr)
            acc, _ = accuracy(clf, te_imgs, y_te)
            log(f"{name} holdout accuracy {acc:.4f}")
            save_classifier(path, clf, label_map)
            self.save_summary(**{f"{name}_holdout_acc": acc})
            self.cache.save(self.root / "render_cache.npz")

    def _load_clf(self, name):
        return _load_classifier(self.root / f"{name}.ckpt")

    def stage_a(self):
        path = self.root / "ema.ckpt"
        if path.exists():
            return
        log(f"training stage A ({self.train_steps} steps)")
        man = self.manifest
        model = GlyphDenoiser(
            DenoiserConfig(latent_hw=RESOLUTION, latent_channels=1, seed=0),
            ConditionerConfig(resolution=RESOLUTION, seed=0),
        )
        tc = TrainConfig(steps=self.train_steps, batch_size=16, seed=0, log_every=200)
        builder = BatchBuilder(man, self.cache, self.maps, self.policy, self.codec,
                               RESOLUTION, tc)
        ema, _ = train_denoiser(model, builder, self.schedule, tc,
                                log_path=self.root / "logs" / "train.jsonl",
                                progress=lambda r: log(f"stage A step {r['step']} loss {r['loss']:.4f}"))
        save_checkpoint(self.root / "model.ckpt", "denoiser", model.state_arrays(),
                        extra=model_checkpoint_extra(model))
        save_checkpoint(path, "denoiser_ema", ema.state_arrays(),
                        extra=model_checkpoint_extra(model))
        self.cache.save(self.root / "render_cache.npz")

    def _teacher(self) -> GlyphDenoiser:
        manifest, state = load_checkpoint(self.root / "ema.ckpt")
        return model_from_checkpoint(manifest, state)

    # -- evaluation machinery ----------------------------------------------------

    def _ref_subset(self, n: int) -> list:
        rng = seed_stream(0, "eval")
        refs = list(self.manifest.ref_chars)
        order = [int(r) for r in rng.permutation(refs)]
        return sorted(order[:n])

    def _bundles_for(self, char_ids, style_id: int, ref_ids) -> list:
        maps = ReferenceMappings.build(self.manifest.decomp_table(), ref_ids)
        sel_rng = seed_stream(1234 + style_id, "selection")
        bundles = []
        for cid in char_ids:
            refs = select_references(cid, maps, self.policy, "normal", sel_rng)
            bundles.append(ConditionBundle(
                content=self.cache.content(cid, RESOLUTION),
                styles=np.stack([self.cache.glyph(r, style_id, RESOLUTION) for r in refs]),
            ))
        return bundles

    def _sample_sweep(self, model, char_ids, style_ids, ref_ids, steps=SAMPLE_STEPS,
                      chunk=24, student=None):
        """Generated 32px glyphs for every (char, style) pair; returns
        (images, char_labels, style_labels)."""
        plan = select_timesteps_trailing(T, steps)
        images, y_c, y_s = [], [], []
        for sid in style_ids:
            bundles = self._bundles_for(char_ids, sid, ref_ids)
            rng = seed_stream(9000 + sid, "diffusion")
            for i in range(0, len(bundles), chunk):
                part = bundles[i : i + chunk]
                if student is not None:
                    out = student_sample(student, part, self.schedule, self.codec, rng)
                else:
                    out = sample(model, part, plan, self.schedule, self.codec, rng,
                                 s_c=SCALES[0], s_s=SCALES[1])
                images.append(out)
                y_c.extend(self.char_map[c] for c in char_ids[i : i + chunk])
                y_s.extend(self.style_map[sid] for _ in part)
        return np.concatenate(images), np.asarray(y_c), np.asarray(y_s)

    def stage_eval_a(self):
        if "acc_content_10step" in self.summary and not self.pilot:
            return
        log("criterion 8 sweep: 10-step CFG sampling on held-out styles")
        teacher = self._teacher()
        char_clf = self._load_clf("char_clf")
        style_clf = self._load_clf("style_clf")
        man = self.manifest
        gen, y_c, y_s = self._sample_sweep(teacher, self.eval_char_ids, man.test_styles,
                                           list(man.ref_chars))
        np.savez_compressed(self.root / "eval_gen_10step.npz", gen=gen, y_c=y_c, y_s=y_s)
        acc_c, _ = accuracy(char_clf, gen, y_c)
        acc_s, _ = accuracy(style_clf, gen, y_s)
        real = np.stack([self.cache.glyph(c, s, RESOLUTION)
                         for s in man.test_styles for c in self.eval_char_ids])
        source = np.stack([self.cache.content(c, RESOLUTION)
                           for s in man.test_styles for c in self.eval_char_ids])
        f_real = style_clf.features(real)
        fid_gen = fid(f_real, style_clf.features(gen))
        fid_source = fid(f_real, style_clf.features(source))
        log(f"10-step Acc(C)={acc_c:.3f} Acc(S)={acc_s:.3f} "
            f"FID(gen)={fid_gen:.2f} FID(source)={fid_source:.2f}")
        self.save_summary(acc_content_10step=acc_c, acc_style_10step=acc_s,
                          fid_gen=fid_gen, fid_source_baseline=fid_source)

    def stage_eval_teacher_1step(self):
        if "acc_content_teacher_1step" in self.summary and not self.pilot:
            return
        log("criterion 9a: undistilled teacher at 1 step")
        teacher = self._teacher()
        char_clf = self._load_clf("char_clf")
        gen, y_c, _ = self._sample_sweep(teacher, self.eval_char_ids,
                                         self.manifest.test_styles,
                                         list(self.manifest.ref_chars), steps=1)
        acc_c, _ = accuracy(char_clf, gen, y_c)
        log(f"teacher 1-step Acc(C)={acc_c:.3f}")
        self.save_summary(acc_content_teacher_1step=acc_c)

    def stage_distill(self):
        path = self.root / "student.ckpt"
        if path.exists():
            return
        log(f"distilling one-step student ({self.distill_steps} steps)")
        teacher = self._teacher()
        tc = TrainConfig(steps=1, batch_size=16, seed=0)
        builder = BatchBuilder(self.manifest, self.cache, self.maps, self.policy,
                               self.codec, RESOLUTION, tc)
        dc = DistillConfig(steps=self.distill_steps, batch_size=16, seed=0,
                           s_c=SCALES[0], s_s=SCALES[1], log_every=100)
        student, _ = distill(teacher, builder, self.schedule, dc,
                             log_path=self.root / "logs" / "distill.jsonl",
                             progress=lambda r: log(f"distill step {r['step']} loss {r['loss']:.5f}"))
        state = dict(student.unet.state_arrays())
        state.update({f"conditioner.{k}": v
                      for k, v in student.conditioner.state_arrays().items()})
        save_checkpoint(path, "student", state,
                        extra={**model_checkpoint_extra(teacher), "fixed_t": T})

    def stage_eval_student(self):
        if "acc_content_student_1step" in self.summary and not self.pilot:
            return
        log("criterion 9b: distilled student at 1 step")
        student = load_student(self.root / "student.ckpt")
        char_clf = self._load_clf("char_clf")
        style_clf = self._load_clf("style_clf")
        gen, y_c, y_s = self._sample_sweep(None, self.eval_char_ids,
                                           self.manifest.test_styles,
                                           list(self.manifest.ref_chars), student=student)
        acc_c, _ = accuracy(char_clf, gen, y_c)
        acc_s, _ = accuracy(style_clf, gen, y_s)
        log(f"student 1-step Acc(C)={acc_c:.3f} Acc(S)={acc_s:.3f}")
        self.save_summary(acc_content_student_1step=acc_c, acc_style_student_1step=acc_s)

    def stage_sr(self):
        path = self.root / "sr_32_128.ckpt"
        if path.exists():
            return
        log(f"training SR stage 32->{SR_TARGET} ({self.sr_steps} steps)")
        man = self.manifest
        stage = SRStage(SRStageConfig(source_resolution=RESOLUTION,
                                      target_resolution=SR_TARGET, seed=0))
        imgs_hi, _, _ = self.cache.stack(man.train_chars[:60], man.train_styles[:10], SR_TARGET)
        stage.fit_standardization(imgs_hi)
        _, state = load_checkpoint(self.root / "ema.ckpt")
        copied, fresh = stage.init_from_stage_a(state)
        log(f"SR init: {len(copied)} shared parameters copied, {len(fresh)} fresh")
        sc = SRTrainConfig(steps=self.sr_steps, batch_size=8, seed=0, log_every=200)
        builder = SRBatchBuilder(man, self.cache, self.maps, self.policy, stage, sc)
        ema, _ = train_sr(stage, builder, self.schedule, sc,
                          log_path=self.root / "logs" / "train_sr.jsonl",
                          progress=lambda r: log(f"SR step {r['step']} loss {r['loss']:.4f}"))
        save_checkpoint(path, "sr_denoiser", ema.state_arrays(),
                        extra={**model_checkpoint_extra(stage.model),
                               "source_resolution": RESOLUTION,
                               "target_resolution": SR_TARGET,
                               "latent_shift": stage.codec.latent_shift,
                               "latent_scale": stage.codec.latent_scale})
        self.cache.save(self.root / "render_cache.npz")

    def stage_eval_sr(self):
        if "sr_downsample_rmse" in self.summary and not self.pilot:
            return
        log("criterion 10 sweep: SR consistency, style recovery, content hold")
        stage = load_sr_stage(self.root / "sr_32_128.ckpt")
        char_clf = self._load_clf("char_clf")
        style_clf_hi = self._load_clf("style_clf_hi")
        man = self.manifest
        data = np.load(self.root / "eval_gen_10step.npz")
        n = min(self.sr_eval_n, data["gen"].shape[0])
        rng = seed_stream(3, "eval")
        pick = np.sort(rng.choice(data["gen"].shape[0], size=n, replace=False))
        lows = data["gen"][pick]
        y_c = data["y_c"][pick]
        y_s = data["y_s"][pick]
        inv_style = {v: k for k, v in self.style_map.items()}
        sel_rng = seed_stream(77, "selection")
        refs_hi = []
        inv_char = {v: k for k, v in self.char_map.items()}
        for ci, si in zip(y_c, y_s):
            ids = select_references(inv_char[int(ci)], self.maps, self.policy, "normal", sel_rng)
            refs_hi.append(np.stack([
                self.cache.glyph(r, inv_style[int(si)], SR_TARGET) for r in ids]))
        refs_hi = np.stack(refs_hi)
        plan = select_timesteps_trailing(T, SAMPLE_STEPS)
        outs = []
        rng_s = seed_stream(5, "sr")
        for i in range(0, n, 8):
            outs.append(upscale(stage, lows[i : i + 8], refs_hi[i : i + 8], plan,
                                self.schedule, rng_s, s_c=SCALES[0], s_s=SCALES[1]))
        hi = np.concatenate(outs)
        np.savez_compressed(self.root / "eval_sr.npz", hi=hi, lows=lows, y_c=y_c, y_s=y_s)
        down = np.stack([area_downsample(h, SR_TARGET // RESOLUTION) for h in hi])
        consistency = float(np.mean([rmse(d, l) for d, l in zip(down, lows)]))
        acc_sr_style, _ = accuracy(style_clf_hi, hi, y_s)
        bicubic = bilinear_upsample(lows, SR_TARGET)
        acc_bic_style, _ = accuracy(style_clf_hi, bicubic, y_s)
        acc_low_c, _ = accuracy(char_clf, lows, y_c)
        acc_sr_c, _ = accuracy(char_clf, down.astype(np.float32), y_c)
        log(f"SR consistency RMSE={consistency:.4f}; Acc(S)@128 sr={acc_sr_style:.3f} "
            f"vs bilinear={acc_bic_style:.3f}; Acc(C) low={acc_low_c:.3f} sr={acc_sr_c:.3f}")
        self.save_summary(sr_downsample_rmse=consistency,
                          sr_style_acc_hi=acc_sr_style,
                          sr_style_acc_baseline=acc_bic_style,
                          sr_content_acc=acc_sr_c, low_content_acc=acc_low_c)

    def stage_eval_ref_sweep(self):
        if "ref_sweep" in self.summary and not self.pilot:
            return
        log("criterion 11 sweep: nested reference sizes")
        teacher = self._teacher()
        style_clf = self._load_clf("style_clf")
        char_clf = self._load_clf("char_clf")
        sizes = (1, 10, len(self.manifest.ref_chars))
        sweep = {}
        for n_ref in sizes:
            refs = self._ref_subset(n_ref)
            gen, y_c, y_s = self._sample_sweep(teacher, self.eval_char_ids,
                                               self.manifest.test_styles, refs)
            acc_s, _ = accuracy(style_clf, gen, y_s)
            acc_c, _ = accuracy(char_clf, gen, y_c)
            sweep[str(n_ref)] = {"acc_style": acc_s, "acc_content": acc_c}
            log(f"n_ref={n_ref}: Acc(S)={acc_s:.3f} Acc(C)={acc_c:.3f}")
        self.save_summary(ref_sweep=sweep)

    STAGES = ("corpus", "classifiers", "stage_a", "eval_a", "eval_teacher_1step",
              "distill", "eval_student", "sr", "eval_sr", "eval_ref_sweep")

    def run(self, until: str | None = None):
        for name in self.STAGES:
            getattr(self, f"stage_{name}" if not name.startswith("stage_") else name)()
            if until and name == until:
                break
        self.save_summary(finished_at=time.strftime("%Y-%m-%d %H:%M:%S"))
        log(f"summary -> {self.summary_path}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="artifacts/acceptance")
    ap.add_argument("--until", choices=Pipeline.STAGES, default=None)
    ap.add_argument("--pilot", action="store_true", help="small configuration dry run")
    args = ap.parse_args()
    Pipeline(Path(args.out), pilot=args.pilot).run(until=args.until)


if __name__ == "__main__":
    main()
