"""Dataset generation, the three-stage training schedule, evaluation and export.

Stage 1 pretrains the matcher on the source domain with L1. Stage 2 trains
the translator and discriminator (adversarial + perceptual + feature
matching + stereo consistency), alternating one discriminator step per
generator step. Stage 3 adapts the matcher using supervised smooth-L1 on
translated pairs plus photometric reprojection on target pairs, with the
translator frozen.

Every loop draws randomness from generators seeded by (master_seed, stage
tag), so re-running any command with the same config and seed reproduces
logs and checkpoints bit for bit.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint, geometry, losses, matcher, synth, translation
from .autodiff import AdamState, Tensor, adam_step, backward, collect_grads, zero_grads
from .config import RunConfig
from .errors import ConfigError

VIEWS = ("left", "right")

# rng stream tags
_TAG_DATA, _TAG_PRETRAIN, _TAG_TRANSLATOR, _TAG_ADAPT, _TAG_TRANSLATE = 1, 2, 3, 4, 5

SPLITS = ("source_train", "source_val", "target_train", "target_test")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _rng(config: RunConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng([config.master_seed, tag])


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def _split_counts(config: RunConfig) -> dict[str, tuple[str, int]]:
    return {
        "source_train": ("source", config.n_source_train),
        "source_val": ("source", config.n_source_val),
        "target_train": ("target", config.n_target_train),
        "target_test": ("target", config.n_target_test),
    }


def gen_data(config: RunConfig) -> Path:
    """Write every split plus the manifest; byte-identical per (config, seed)."""
    data_dir = Path(config.data_dir)
    rng = _rng(config, _TAG_DATA)
    rows = []
    sample_id = 0
    for split, (domain, count) in _split_counts(config).items():
        seeds = rng.integers(0, 2**62, size=count)
        for k in range(count):
            spec = synth.SceneSpec(
                seed=int(seeds[k]),
                num_layers=config.num_layers,
                disparity_range=(config.d_min, config.d_max_scene),
                domain_style=domain,
                image_size=(config.image_height, config.image_width),
                d_max_full=config.d_max_full,
            )
            sample = synth.generate_scene(spec)
            paths = synth.write_sample(sample, data_dir / split, f"sample_{k:05d}")
            rows.append(
                {
                    "sample_id": str(sample_id),
                    "seed": str(spec.seed),
                    "domain": domain,
                    "split": split,
                    **{key: f"{split}/{name}" for key, name in paths.items()},
                }
            )
            sample_id += 1
    manifest = data_dir / "manifest.csv"
    synth.write_manifest(rows, manifest)
    return manifest


class LoadedSplit:
    """All samples of one split in memory, with cached occlusion masks."""

    def __init__(self, samples: list[synth.StereoSample]):
        self.samples = samples
        self.masks = [
            {
                v: geometry.occlusion_mask(s.disparities[v], s.disparities[geometry.other_view(v)])
                for v in VIEWS
            }
            for s in samples
        ]

    def __len__(self) -> int:
        return len(self.samples)


def load_split(config: RunConfig, split: str) -> LoadedSplit:
    if split not in SPLITS:
        raise ConfigError(f"unknown split '{split}', expected one of {SPLITS}")
    data_dir = Path(config.data_dir)
    manifest = data_dir / "manifest.csv"
    if not manifest.exists():
        raise ConfigError(f"dataset manifest not found at {manifest}; run gen-data first")
    rig = synth.default_rig(config.image_height, config.image_width)
    rows = [r for r in synth.read_manifest(manifest) if r["split"] == split]
    if not rows:
        raise ConfigError(f"split '{split}' is empty in {manifest}")
    return LoadedSplit([synth.read_sample(data_dir, row, rig) for row in rows])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _save_params(path: Path, params: dict[str, Tensor], extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = {name: p.data for name, p in params.items()}
    if extra:
        arrays.update(extra)
    checkpoint.save_arrays(path, arrays)


def _load_params(path: Path, params: dict[str, Tensor], context: str, extra_prefix: str = "sn:"):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{context} checkpoint not found: {path}")
    arrays = checkpoint.load_arrays(path)
    extra = {k[len(extra_prefix):]: v for k, v in arrays.items() if k.startswith(extra_prefix)}
    main = {k: v for k, v in arrays.items() if not k.startswith(extra_prefix)}
    if set(main) != set(params):
        missing = set(params) - set(main)
        unexpected = set(main) - set(params)
        raise ConfigError(
            f"{context} checkpoint does not match config: missing={sorted(missing)}, "
            f"unexpected={sorted(unexpected)}"
        )
    for name, p in params.items():
        if main[name].shape != p.data.shape:
            raise ConfigError(
                f"{context} checkpoint shape mismatch for '{name}': "
                f"{main[name].shape} vs {p.data.shape}"
            )
        p.data = main[name]
    return extra


def _init_matcher(config: RunConfig) -> matcher.MatcherParams:
    rng = np.random.default_rng([config.master_seed, 10])
    return matcher.MatcherParams(rng, channels=config.matcher_channels, d_max=config.d_max_full)


def _init_translator(config: RunConfig) -> translation.TranslatorParams:
    rng = np.random.default_rng([config.master_seed, 11])
    return translation.TranslatorParams(
        rng,
        base_channels=config.base_channels,
        n_scales=config.n_scales,
        z_channels=config.z_channels,
        d_max_full=config.d_max_full,
        sca_enabled=config.sca_enabled,
        cloud_scale=config.cloud_scale,
    )


def _init_discriminator(config: RunConfig) -> translation.DiscriminatorParams:
    rng = np.random.default_rng([config.master_seed, 12])
    return translation.DiscriminatorParams(rng, base_channels=config.base_channels)


def load_matcher(config: RunConfig, path: Path, trainable: bool = True) -> matcher.MatcherParams:
    mparams = _init_matcher(config)
    _load_params(path, mparams.params, "matcher")
    if not trainable:
        for p in mparams.params.values():
            p.requires_grad = False
    return mparams


def load_translator(config: RunConfig, path: Path, trainable: bool = True) -> translation.TranslatorParams:
    tparams = _init_translator(config)
    _load_params(path, tparams.params, "translator")
    if not trainable:
        for p in tparams.params.values():
            p.requires_grad = False
    return tparams


def load_discriminator(config: RunConfig, path: Path) -> translation.DiscriminatorParams:
    dparams = _init_discriminator(config)
    extra = _load_params(path, dparams.params, "discriminator")
    for name, u in extra.items():
        if name in dparams.sn_states:
            dparams.sn_states[name].u_vector = u
    return dparams


# ---------------------------------------------------------------------------
# stage 1: source-domain pretraining
# ---------------------------------------------------------------------------


def _l1_disparity_loss(pred: Tensor, gt: geometry.DisparityMap) -> Tensor:
    valid = gt.valid_mask.data
    n = float(valid.sum())
    diff = ad.absolute(ad.sub(pred, ad.constant(gt.values.data)))
    return ad.mulc(ad.sum_all(ad.mul(diff, ad.constant(valid))), 1.0 / n)


def _val_epe(split: LoadedSplit, mparams: matcher.MatcherParams) -> float:
    errs = []
    for s in split.samples:
        pred = matcher.predict_disparity(s.images["left"].detach(), s.images["right"].detach(), _frozen(mparams))
        errs.append(geometry.epe(pred, s.disparities["left"]))
    return float(np.mean(errs))


def _frozen(mparams: matcher.MatcherParams) -> matcher.MatcherParams:
    frozen = matcher.MatcherParams.__new__(matcher.MatcherParams)
    frozen.channels = mparams.channels
    frozen.d_max = mparams.d_max
    frozen.params = translation.detach_params(mparams.params)
    return frozen


def pretrain(config: RunConfig) -> Path:
    """Stage 1: train the matcher on source pairs with L1; returns ckpt path."""
    train = load_split(config, "source_train")
    val = load_split(config, "source_val")
    mparams = _init_matcher(config)
    state = AdamState(
        mparams.params, config.pretrain_lr, config.pretrain_beta1, config.pretrain_beta2
    )
    rng = _rng(config, _TAG_PRETRAIN)
    loss_rows, val_rows = [], []
    for it in range(1, config.pretrain_iters + 1):
        batch = rng.integers(0, len(train), size=config.pretrain_batch)
        zero_grads(mparams.params)
        total = None
        for idx in batch:
            s = train.samples[idx]
            pred = matcher.predict_disparity(s.images["left"], s.images["right"], mparams)
            term = _l1_disparity_loss(pred, s.disparities["left"])
            total = term if total is None else ad.add(total, term)
        loss = ad.mulc(total, 1.0 / len(batch))
        backward(loss)
        adam_step(mparams.params, collect_grads(mparams.params), state)
        loss_rows.append([it, _fmt(loss.item())])
        if it % config.val_interval == 0 or it == config.pretrain_iters:
            val_rows.append([it, _fmt(_val_epe(val, mparams))])
    out_dir = Path(config.output_dir)
    _write_csv(out_dir / "pretrain_loss.csv", ["iteration", "l1"], loss_rows)
    _write_csv(out_dir / "pretrain_val.csv", ["iteration", "epe"], val_rows)
    ckpt = Path(config.checkpoint_dir) / "matcher.ckpt"
    _save_params(ckpt, mparams.params)
    return ckpt


# ---------------------------------------------------------------------------
# stage 2: translator + discriminator
# ---------------------------------------------------------------------------


def _advance_spectral(dparams: translation.DiscriminatorParams) -> None:
    # one power iteration per kernel per training step
    for name, state in dparams.sn_states.items():
        ad.spectral_normalize(dparams.params[name], state, update=True)


def _mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mulc(total, 1.0 / len(terms))


def train_translator(config: RunConfig, matcher_ckpt: Path | None = None) -> tuple[Path, Path]:
    """Stage 2: adversarial translator training; returns (G, C) ckpt paths.

    ``matcher_ckpt`` is accepted for CLI symmetry but unused: this stage
    trains the translation network and discriminator only.
    """
    del matcher_ckpt
    source = load_split(config, "source_train")
    target = load_split(config, "target_train")
    tparams = _init_translator(config)
    dparams = _init_discriminator(config)
    weights = config.loss_weights()
    g_state = AdamState(
        tparams.params, config.translator_lr_g, config.translator_beta1, config.translator_beta2
    )
    c_state = AdamState(
        dparams.params, config.translator_lr_c, config.translator_beta1, config.translator_beta2
    )
    rng = _rng(config, _TAG_TRANSLATOR)
    rig = synth.default_rig(config.image_height, config.image_width)
    rows = []
    for it in range(1, config.translator_iters + 1):
        src_idx = rng.integers(0, len(source), size=config.translator_batch)
        tgt_idx = rng.integers(0, len(target), size=config.translator_batch)
        z_batch = [ad.constant(rng.standard_normal(config.z_channels)) for _ in src_idx]

        # generator step (discriminator parameters detached)
        det = translation.detach_params(dparams.params)
        adv_terms, perc_terms, feat_terms, stereo_terms = [], [], [], []
        fakes_batch = []
        for z, si, ti in zip(z_batch, src_idx, tgt_idx):
            src = source.samples[si]
            tgt = target.samples[ti]
            fakes, feats = translation.translate(
                src.images, src.disparities, tgt.images, z, tparams, rig
            )
            fakes_batch.append(fakes)
            fake_logits, fake_hidden = {}, []
            for v in VIEWS:
                logits, hidden = translation.discriminate(fakes[v], dparams, det)
                fake_logits[v] = logits
                fake_hidden.extend(hidden)
            real_hidden = []
            for v in VIEWS:
                _, hidden = translation.discriminate(tgt.images[v], dparams, det)
                real_hidden.extend(hidden)
            adv_terms.append(losses.adv_loss_generator(fake_logits))
            perc_terms.append(
                _mean([losses.perceptual_loss(fakes[v], src.images[v]) for v in VIEWS])
            )
            feat_terms.append(losses.feature_matching_loss(fake_hidden, real_hidden))
            stereo_terms.append(
                losses.stereo_consistency_loss(feats, fakes, src.disparities, source.masks[si])
            )
        components = {
            "adv_g": _mean(adv_terms),
            "perc": _mean(perc_terms),
            "feat": _mean(feat_terms),
            "stereo": _mean(stereo_terms),
        }
        loss_g = losses.full_objective(components, weights)["loss_G"]
        zero_grads(tparams.params)
        backward(loss_g)
        adam_step(tparams.params, collect_grads(tparams.params), g_state)

        # discriminator step on pre-step fakes
        _advance_spectral(dparams)
        adv_c_terms = []
        for fakes, si, ti in zip(fakes_batch, src_idx, tgt_idx):
            src = source.samples[si]
            tgt = target.samples[ti]
            fl = {v: translation.discriminate(fakes[v].detach(), dparams)[0] for v in VIEWS}
            rs = {v: translation.discriminate(src.images[v], dparams)[0] for v in VIEWS}
            rt = {v: translation.discriminate(tgt.images[v], dparams)[0] for v in VIEWS}
            adv_c_terms.append(losses.adv_loss_discriminator(fl, rs, rt))
        loss_c = _mean(adv_c_terms)
        zero_grads(dparams.params)
        backward(loss_c)
        adam_step(dparams.params, collect_grads(dparams.params), c_state)

        rows.append(
            [
                it,
                _fmt(components["adv_g"].item()),
                _fmt(loss_c.item()),
                _fmt(components["perc"].item()),
                _fmt(components["feat"].item()),
                _fmt(components["stereo"].item()),
            ]
        )
    _write_csv(
        Path(config.output_dir) / "translator_loss.csv",
        ["iteration", "adv_g", "adv_c", "perc", "feat", "stereo"],
        rows,
    )
    ckpt_dir = Path(config.checkpoint_dir)
    g_ckpt = ckpt_dir / "translator.ckpt"
    c_ckpt = ckpt_dir / "discriminator.ckpt"
    _save_params(g_ckpt, tparams.params)
    _save_params(
        c_ckpt,
        dparams.params,
        extra={f"sn:{name}": state.u_vector for name, state in dparams.sn_states.items()},
    )
    return g_ckpt, c_ckpt


# ---------------------------------------------------------------------------
# stage 3: matcher adaptation
# ---------------------------------------------------------------------------


def adapt(config: RunConfig, translator_ckpt: Path, matcher_ckpt: Path) -> Path:
    """Stage 3: adapt the matcher with translated supervision + reprojection."""
    source = load_split(config, "source_train")
    target = load_split(config, "target_train")
    tparams = load_translator(config, translator_ckpt, trainable=False)
    mparams = load_matcher(config, matcher_ckpt, trainable=True)
    weights = config.loss_weights()
    state = AdamState(mparams.params, config.adapt_lr, config.adapt_beta1, config.adapt_beta2)
    rng = _rng(config, _TAG_ADAPT)
    rig = synth.default_rig(config.image_height, config.image_width)

    # translator is frozen: translate each source sample once, fixed z and style
    translated: list[dict[str, Tensor]] = []
    for k, s in enumerate(source.samples):
        z = ad.constant(rng.standard_normal(config.z_channels))
        style = target.samples[k % len(target)]
        fakes, _ = translation.translate(s.images, s.disparities, style.images, z, tparams, rig)
        translated.append({v: fakes[v].detach() for v in VIEWS})

    rows = []
    for it in range(1, config.adapt_iters + 1):
        src_idx = rng.integers(0, len(source), size=config.adapt_batch)
        tgt_idx = rng.integers(0, len(target), size=config.adapt_batch)
        disp_terms, reproj_terms = [], []
        for si, ti in zip(src_idx, tgt_idx):
            src = source.samples[si]
            fakes = translated[si]
            preds = matcher.predict_both_views(fakes["left"], fakes["right"], mparams)
            disp_terms.append(losses.disparity_loss(preds, src.disparities))
            tgt = target.samples[ti]
            tpreds = matcher.predict_both_views(tgt.images["left"], tgt.images["right"], mparams)
            reproj_terms.append(
                losses.reprojection_loss(tgt.images, tpreds, alpha=weights.alpha)
            )
        components = {"disp": _mean(disp_terms), "reproj": _mean(reproj_terms)}
        loss_e = losses.full_objective(components, weights)["loss_E"]
        zero_grads(mparams.params)
        backward(loss_e)
        adam_step(mparams.params, collect_grads(mparams.params), state)
        rows.append(
            [it, _fmt(components["disp"].item()), _fmt(components["reproj"].item()), _fmt(loss_e.item())]
        )
    _write_csv(
        Path(config.output_dir) / "adapt_loss.csv", ["iteration", "disp", "reproj", "loss_e"], rows
    )
    ckpt = Path(config.checkpoint_dir) / "matcher_adapted.ckpt"
    _save_params(ckpt, mparams.params)
    return ckpt


# ---------------------------------------------------------------------------
# evaluation and translation export
# ---------------------------------------------------------------------------


def evaluate_samples(split: LoadedSplit, predict_fn) -> tuple[list[list], float, float]:
    """Per-sample EPE / D1-all rows plus their means.

    ``predict_fn(sample) -> Tensor[H,W]`` supplies the left-view disparity.
    """
    rows = []
    epes, d1s = [], []
    for k, s in enumerate(split.samples):
        pred = predict_fn(s)
        e = geometry.epe(pred, s.disparities["left"])
        d = geometry.d1_all(pred, s.disparities["left"])
        rows.append([k, _fmt(e), _fmt(d)])
        epes.append(e)
        d1s.append(d)
    return rows, float(np.mean(epes)), float(np.mean(d1s))


def evaluate(config: RunConfig, matcher_ckpt: Path, split: str) -> dict[str, float]:
    """Write per-sample metrics CSV for a split; returns the aggregates."""
    data = load_split(config, split)
    mparams = load_matcher(config, matcher_ckpt, trainable=False)

    def predict(sample: synth.StereoSample) -> Tensor:
        return matcher.predict_disparity(sample.images["left"], sample.images["right"], mparams)

    rows, mean_epe, mean_d1 = evaluate_samples(data, predict)
    rows.append(["mean", _fmt(mean_epe), _fmt(mean_d1)])
    _write_csv(
        Path(config.output_dir) / f"evaluate_{split}.csv", ["sample", "epe", "d1_all"], rows
    )
    return {"epe": mean_epe, "d1_all": mean_d1}


def image_consistency(
    images: dict[str, Tensor],
    disparities: dict[str, geometry.DisparityMap],
    masks: dict[str, geometry.OcclusionMask],
) -> float:
    """Image-level stereo-consistency score (no feature scales)."""
    empty: dict[str, list] = {"left": [], "right": []}
    return losses.stereo_consistency_loss(empty, images, disparities, masks).item()


def translate_export(
    config: RunConfig, translator_ckpt: Path, sample_ids: list[int] | None = None
) -> Path:
    """Translate held-out source scenes; write PPM pairs + consistency CSV."""
    source = load_split(config, "source_val")
    target = load_split(config, "target_test")
    tparams = load_translator(config, translator_ckpt, trainable=False)
    rng = _rng(config, _TAG_TRANSLATE)
    rig = synth.default_rig(config.image_height, config.image_width)
    if sample_ids is None:
        sample_ids = list(range(len(source)))
    for sid in sample_ids:
        if not 0 <= sid < len(source):
            raise ConfigError(f"unknown sample id {sid}; source_val has {len(source)} samples")
    out_dir = Path(config.output_dir) / "translated"
    out_dir.mkdir(parents=True, exist_ok=True)
    # z must not depend on which ids were requested
    z_all = {sid: ad.constant(rng.standard_normal(config.z_channels)) for sid in range(len(source))}
    rows = []
    from . import fileio

    for sid in sample_ids:
        src = source.samples[sid]
        tgt = target.samples[sid % len(target)]
        fakes, _ = translation.translate(
            src.images, src.disparities, tgt.images, z_all[sid], tparams, rig
        )
        fileio.write_ppm(fakes["left"], out_dir / f"sample_{sid:05d}_left.ppm")
        fileio.write_ppm(fakes["right"], out_dir / f"sample_{sid:05d}_right.ppm")
        score = image_consistency(fakes, src.disparities, source.masks[sid])
        rows.append([sid, _fmt(score)])
    csv_path = Path(config.output_dir) / "consistency.csv"
    _write_csv(csv_path, ["sample", "consistency"], rows)
    return csv_path
