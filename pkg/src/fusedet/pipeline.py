"""Stage orchestration over on-disk artifacts.

Every stage reads its inputs from a shared output directory, writes its
products there, and leaves a run log carrying the config digest and seed.
Artifacts for a dataset are tagged (by default with the name of the
directory holding its manifest), so one output directory can hold a train
and a test split side by side. All stage-level randomness comes from seeds
derived deterministically from the configured base seed, so reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import cache, modelio
from .classify import (
    FusionModel,
    SvmBank,
    mine_hard_negatives,
    train_fusion,
    train_svm,
)
from .config import PipelineConfig, config_digest
from .context import (
    PresencePrior,
    filter_detections,
    presence_scores,
    select_thresholds,
    train_presence_prior,
)
from .core import Box, Detection, GroundTruth, iou, nms, read_detections, write_detections
from .evaluation import mean_ap, per_class_report, read_report, write_report, categories_won
from .features import (
    dense_descriptors,
    fisher_encode,
    GmmModel,
    PcaModel,
    gmm_fit,
    hog,
    load_cnn_features,
    pca_apply,
    pca_fit,
    write_cnn_features,
)
from .images import Image, draw_rect, read_pnm, sample_window_rgb, write_pnm
from .manifest import DatasetManifest, read_manifest
from .proposals import SelectiveSearchConfig, selective_search
from .regress import BoxRegressor, refine, train_bbox_regressor
from .synth import SynthSpec, generate_dataset

logger = logging.getLogger(__name__)

CHANNELS = ("cnn", "hog", "ifv")
CNN_EMBED_SIDE = 6  # stand-in embedding: 6x6 RGB thumbnail, 108 dims


class MissingArtifact(RuntimeError):
    """An upstream product is absent; the message names the stage to run."""


def derive_seed(base: int, *tokens) -> int:
    """Stable 64-bit child seed from the base seed and a token path."""
    blob = "|".join([str(base), *map(str, tokens)]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def tag_for(manifest_path, override: Optional[str] = None) -> str:
    if override:
        return override
    return Path(manifest_path).resolve().parent.name


# ---------------------------------------------------------------------------
# artifact paths

def proposals_path(out_dir, tag):
    return Path(out_dir) / f"proposals_{tag}.txt"


def features_path(out_dir, tag):
    return Path(out_dir) / f"features_{tag}.npz"


def cnn_path(out_dir, tag):
    return Path(out_dir) / f"cnn_{tag}.txt"


def cnn_images_path(out_dir, tag):
    return Path(out_dir) / f"cnn_images_{tag}.txt"


def codebook_paths(out_dir):
    out = Path(out_dir)
    return out / "codebook_pca.model", out / "codebook_gmm.model"


def bank_path(out_dir, channel):
    return Path(out_dir) / f"svm_{channel}.model"


def fusion_path(out_dir):
    return Path(out_dir) / "fusion.model"


def regressor_path(out_dir):
    return Path(out_dir) / "regressor.model"


def prior_path(out_dir):
    return Path(out_dir) / "prior.model"


def detections_path(out_dir, tag, channel="fused"):
    suffix = "" if channel == "fused" else f"_{channel}"
    return Path(out_dir) / f"detections_{tag}{suffix}.txt"


def report_path(out_dir, tag, channel="fused"):
    suffix = "" if channel == "fused" else f"_{channel}"
    return Path(out_dir) / f"report_{tag}{suffix}.txt"


def _require(path: Path, stage: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"{Path(path).name} not found; run '{stage}' first")
    return Path(path)


def _run_log(out_dir, stage: str, tag: str, cfg: PipelineConfig, extra: Dict[str, object]):
    path = Path(out_dir) / f"runlog_{stage}_{tag}.txt"
    with open(path, "w") as fh:
        fh.write(f"stage {stage}\n")
        fh.write(f"tag {tag}\n")
        fh.write(f"config {config_digest(cfg)}\n")
        fh.write(f"seed {cfg.seed}\n")
        for key in sorted(extra):
            fh.write(f"{key} {extra[key]}\n")


# ---------------------------------------------------------------------------
# proposals file

def write_proposals(path, per_image: Sequence[Tuple[str, Sequence[Box]]]) -> None:
    with open(path, "w") as fh:
        for image_id, boxes in per_image:
            fh.write(f"{image_id} {len(boxes)}\n")
            for b in boxes:
                coords = (b.x_min, b.y_min, b.x_max, b.y_max)
                fh.write(" ".join(modelio.fmt_float(v) for v in coords) + "\n")


def read_proposals(path) -> Dict[str, List[Box]]:
    out: Dict[str, List[Box]] = {}
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 2:
            raise ValueError(f"{path}: expected 'image_id count', got {lines[i]!r}")
        image_id, count = parts[0], int(parts[1])
        if image_id in out:
            raise ValueError(f"{path}: duplicate image {image_id}")
        if i + count >= len(lines):
            raise ValueError(f"{path}: image {image_id} declares {count} boxes, file ends early")
        boxes = []
        for j in range(count):
            toks = lines[i + 1 + j].split()
            if len(toks) != 4:
                raise ValueError(f"{path}: bad proposal line {lines[i + 1 + j]!r}")
            x0, y0, x1, y1 = (float(t) for t in toks)
            boxes.append(Box(x0, y0, x1, y1))
        out[image_id] = boxes
        i += 1 + count
    return out


# ---------------------------------------------------------------------------
# stages

def stage_propose(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = read_manifest(manifest_path)
    ss_cfg = SelectiveSearchConfig(
        k=cfg.seg_k,
        sigma=cfg.seg_sigma,
        min_size=cfg.seg_min_size,
        max_boxes=cfg.proposals_max_per_image,
    )
    per_image = []
    total = 0
    for im in man.images:
        img = read_pnm(man.resolved_path(im))
        boxes = selective_search(img, ss_cfg)
        per_image.append((im.image_id, boxes))
        total += len(boxes)
    path = proposals_path(out_dir, tag)
    write_proposals(path, per_image)
    _run_log(out_dir, "propose", tag, cfg, {"images": len(man.images), "proposals": total})
    return path


def _embed_window(img: Image, box: Box) -> np.ndarray:
    """Stand-in for an external CNN: an L2-normalized small RGB thumbnail."""
    v = sample_window_rgb(img, box, CNN_EMBED_SIDE, CNN_EMBED_SIDE).ravel() / 255.0
    return v / max(float(np.sqrt(v @ v)), 1e-12)


def _canonical_window(img: Image, box: Box, side: int) -> Image:
    rgb = sample_window_rgb(img, box, side, side)
    return Image.from_array(np.clip(np.rint(rgb), 0, 255).astype(np.uint8))


def _fit_codebook(cfg: PipelineConfig, man: DatasetManifest, out_dir) -> Tuple[PcaModel, GmmModel]:
    pca_file, gmm_file = codebook_paths(out_dir)
    if pca_file.exists() and gmm_file.exists():
        return PcaModel.load(pca_file), GmmModel.load(gmm_file)

    chunks = []
    total = 0
    for im in man.images:
        img = read_pnm(man.resolved_path(im))
        d = dense_descriptors(img, img.full_box, cfg.ifv_stride, cfg.ifv_patch)
        if len(d):
            chunks.append(d)
            total += len(d)
        if total >= 4 * cfg.ifv_codebook_samples:
            break
    if not chunks:
        raise ValueError("no descriptors available to fit the codebook")
    pool = np.concatenate(chunks)
    if len(pool) > cfg.ifv_codebook_samples:
        rng = np.random.default_rng(derive_seed(cfg.seed, "codebook-sample"))
        keep = np.sort(rng.choice(len(pool), size=cfg.ifv_codebook_samples, replace=False))
        pool = pool[keep]
    pca = pca_fit(pool, cfg.ifv_pca_dim, derive_seed(cfg.seed, "pca"))
    reduced = pca_apply(pca, pool)
    gmm = gmm_fit(
        reduced,
        cfg.ifv_gmm_k,
        cfg.ifv_gmm_iters,
        cfg.ifv_gmm_tol,
        derive_seed(cfg.seed, "gmm"),
        cfg.ifv_variance_floor,
    )
    pca.save(pca_file)
    gmm.save(gmm_file)
    logger.info("codebook fit on %d descriptors", len(pool))
    return pca, gmm


def _window_fisher(cfg, img: Image, box: Box, pca: PcaModel, gmm: GmmModel) -> np.ndarray:
    win = _canonical_window(img, box, cfg.ifv_window)
    d = dense_descriptors(win, win.full_box, cfg.ifv_stride, cfg.ifv_patch)
    return fisher_encode(pca_apply(pca, d), gmm)


def stage_extract(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    props = read_proposals(_require(proposals_path(out_dir, tag), "propose"))

    pca, gmm = _fit_codebook(cfg, man, out_dir)

    hog_rows: List[np.ndarray] = []
    ifv_rows: List[np.ndarray] = []
    prior_rows: List[np.ndarray] = []
    row_image: List[int] = []
    row_proposal: List[int] = []
    cnn_records: List[Tuple[str, int, np.ndarray]] = []
    image_records: List[Tuple[str, int, np.ndarray]] = []

    for i, im in enumerate(man.images):
        if im.image_id not in props:
            raise MissingArtifact(
                f"no proposals for image {im.image_id}; rerun 'propose' on this manifest"
            )
        img = read_pnm(man.resolved_path(im))
        boxes = props[im.image_id]
        for p, box in enumerate(boxes):
            hog_rows.append(hog(img, box, cfg.hog_cells_x, cfg.hog_cells_y).astype(np.float32))
            ifv_rows.append(_window_fisher(cfg, img, box, pca, gmm).astype(np.float32))
            cnn_records.append((im.image_id, p, _embed_window(img, box)))
            row_image.append(i)
            row_proposal.append(p)
        prior_rows.append(_window_fisher(cfg, img, img.full_box, pca, gmm).astype(np.float32))
        image_records.append((im.image_id, 0, _embed_window(img, img.full_box)))

    write_cnn_features(cnn_path(out_dir, tag), cnn_records)
    write_cnn_features(cnn_images_path(out_dir, tag), image_records)
    arrays = {
        "hog": np.stack(hog_rows) if hog_rows else np.zeros((0, 36 * cfg.hog_cells_x * cfg.hog_cells_y), np.float32),
        "ifv": np.stack(ifv_rows) if ifv_rows else np.zeros((0, 1), np.float32),
        "prior_ifv": np.stack(prior_rows),
        "row_image": np.asarray(row_image, dtype=np.int32),
        "row_proposal": np.asarray(row_proposal, dtype=np.int32),
    }
    path = features_path(out_dir, tag)
    cache.save_arrays(path, arrays)
    _run_log(out_dir, "extract", tag, cfg, {"rows": len(row_image), "images": len(man.images)})
    return path


def _load_channel_matrices(cfg, man, out_dir, tag):
    """Per-proposal feature matrices for all three channels, plus row index."""
    feats = cache.load_arrays(_require(features_path(out_dir, tag), "extract"))
    table = load_cnn_features(_require(cnn_path(out_dir, tag), "extract"))
    row_image = feats["row_image"]
    row_proposal = feats["row_proposal"]
    ids = [man.images[i].image_id for i in row_image]
    cnn = np.stack(
        [table.get(ids[r], int(row_proposal[r])) for r in range(len(ids))]
    ) if len(ids) else np.zeros((0, table.dim))
    return {
        "cnn": cnn,
        "hog": feats["hog"],
        "ifv": feats["ifv"],
    }, row_image, row_proposal, feats


def _label_rows(cfg, man, props, row_image, row_proposal):
    """Training label per feature row: category id, -1 background, -2 ignored.

    Also returns, per row, the best-IoU ground truth (or None) for the box.
    """
    n = len(row_image)
    labels = np.full(n, -1, dtype=np.int64)
    best_gts: List[Optional[GroundTruth]] = [None] * n
    boxes_per_row: List[Box] = [None] * n  # type: ignore[assignment]
    for i, im in enumerate(man.images):
        rows = np.nonzero(row_image == i)[0]
        if len(rows) == 0:
            continue
        boxes = props[im.image_id]
        for r in rows:
            box = boxes[int(row_proposal[r])]
            boxes_per_row[r] = box
            if not im.ground_truths:
                continue
            ious = [iou(box, gt.box) for gt in im.ground_truths]
            j = int(np.argmax(ious))
            best_gts[r] = im.ground_truths[j]
            if ious[j] >= cfg.train_pos_iou:
                labels[r] = im.ground_truths[j].category_id
            elif ious[j] >= cfg.train_neg_iou:
                labels[r] = -2
    return labels, best_gts, boxes_per_row


def stage_train_svm(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None):
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    props = read_proposals(_require(proposals_path(out_dir, tag), "propose"))
    channels, row_image, row_proposal, _ = _load_channel_matrices(cfg, man, out_dir, tag)
    labels, _, _ = _label_rows(cfg, man, props, row_image, row_proposal)

    paths = []
    for channel in CHANNELS:
        X_all = channels[channel]
        models = {}
        for cid in range(man.n_categories):
            pos = np.nonzero(labels == cid)[0]
            neg = np.nonzero(labels == -1)[0]
            if len(pos) == 0:
                raise ValueError(
                    f"category {cid} ({man.categories[cid]}) has no positive proposals; "
                    "cannot train its classifier"
                )
            if len(neg) == 0:
                raise ValueError("no background proposals available for training")
            if len(neg) > cfg.svm_negative_cap:
                rng = np.random.default_rng(derive_seed(cfg.seed, "svm-neg", channel, cid))
                neg = np.sort(rng.choice(neg, size=cfg.svm_negative_cap, replace=False))
            X = np.concatenate([X_all[pos], X_all[neg]]).astype(np.float64)
            y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
            model = train_svm(X, y, cfg.svm_lambda, cfg.svm_epochs, derive_seed(cfg.seed, "svm", channel, cid))
            if cfg.svm_hard_negatives and cfg.svm_hard_negative_count > 0:
                all_neg = np.nonzero(labels == -1)[0]
                picks = mine_hard_negatives(
                    model, X_all[all_neg].astype(np.float64), cfg.svm_hard_negative_count
                )
                hard = all_neg[picks]
                neg = np.unique(np.concatenate([neg, hard]))
                X = np.concatenate([X_all[pos], X_all[neg]]).astype(np.float64)
                y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
                model = train_svm(
                    X, y, cfg.svm_lambda, cfg.svm_epochs, derive_seed(cfg.seed, "svm-hard", channel, cid)
                )
            models[cid] = model
        bank = SvmBank.from_models(channel, models)
        path = bank_path(out_dir, channel)
        bank.save(path)
        paths.append(path)
    _run_log(out_dir, "train-svm", tag, cfg, {"categories": man.n_categories, "rows": len(labels)})
    return paths


def _bank_scores(channels: Dict[str, np.ndarray], banks: Dict[str, SvmBank]) -> np.ndarray:
    """Fused (cnn, hog, ifv) score matrix for every feature row."""
    parts = []
    for channel in CHANNELS:
        bank = banks[channel]
        parts.append(channels[channel].astype(np.float64) @ bank.weights.T + bank.biases)
    return np.concatenate(parts, axis=1)


def _load_banks(out_dir) -> Dict[str, SvmBank]:
    return {ch: SvmBank.load(_require(bank_path(out_dir, ch), "train-svm")) for ch in CHANNELS}


def stage_train_fusion(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    props = read_proposals(_require(proposals_path(out_dir, tag), "propose"))
    channels, row_image, row_proposal, _ = _load_channel_matrices(cfg, man, out_dir, tag)
    labels, _, _ = _label_rows(cfg, man, props, row_image, row_proposal)
    banks = _load_banks(out_dir)

    fused = _bank_scores(channels, banks)
    keep = labels != -2
    fusion = train_fusion(
        fused[keep],
        labels[keep],
        cfg.fusion_lambda,
        cfg.fusion_epochs,
        derive_seed(cfg.seed, "fusion"),
        category_ids=list(range(man.n_categories)),
    )
    path = fusion_path(out_dir)
    fusion.save(path)
    _run_log(out_dir, "train-fusion", tag, cfg, {"rows": int(keep.sum())})
    return path


def stage_train_regressor(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    props = read_proposals(_require(proposals_path(out_dir, tag), "propose"))
    channels, row_image, row_proposal, _ = _load_channel_matrices(cfg, man, out_dir, tag)
    _, best_gts, boxes_per_row = _label_rows(cfg, man, props, row_image, row_proposal)

    rows = [r for r, gt in enumerate(best_gts) if gt is not None]
    X = channels[cfg.regress_channel][rows].astype(np.float64)
    regressor = train_bbox_regressor(
        X,
        [boxes_per_row[r] for r in rows],
        [best_gts[r] for r in rows],
        cfg.regress_lambda,
        cfg.regress_match_iou,
    )
    path = regressor_path(out_dir)
    regressor.save(path)
    _run_log(
        out_dir,
        "train-regressor",
        tag,
        cfg,
        {"pairs": len(rows), "trained_categories": len(regressor.coefficients)},
    )
    return path


def _prior_features(cfg, man, out_dir, tag) -> np.ndarray:
    if cfg.prior_feature == "ifv":
        feats = cache.load_arrays(_require(features_path(out_dir, tag), "extract"))
        return feats["prior_ifv"].astype(np.float64)
    table = load_cnn_features(_require(cnn_images_path(out_dir, tag), "extract"))
    return np.stack([table.get(im.image_id, 0) for im in man.images])


def stage_train_prior(cfg: PipelineConfig, manifest_path, out_dir, tag: Optional[str] = None) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    F = _prior_features(cfg, man, out_dir, tag)
    n = len(man.images)
    ids = [im.image_id for im in man.images]
    label_sets = [{gt.category_id for gt in im.ground_truths} for im in man.images]

    # deterministic held-out split for threshold calibration, independent of
    # manifest order
    by_id = sorted(range(n), key=lambda i: ids[i])
    n_held = n // 5 if n >= 5 else (1 if n >= 2 else 0)
    rng = np.random.default_rng(derive_seed(cfg.seed, "prior-split"))
    perm = rng.permutation(n)
    held_positions = set(int(p) for p in perm[:n_held])
    train_idx = [by_id[p] for p in range(n) if p not in held_positions]
    held_idx = [by_id[p] for p in range(n) if p in held_positions]

    prior = train_presence_prior(
        F[train_idx],
        [label_sets[i] for i in train_idx],
        [ids[i] for i in train_idx],
        man.n_categories,
        cfg.svm_lambda,
        cfg.svm_epochs,
        derive_seed(cfg.seed, "prior"),
    )
    if cfg.prior_tau is not None:
        tau = np.full(man.n_categories, cfg.prior_tau)
    elif held_idx:
        scores = np.stack([presence_scores(F[i], prior) for i in held_idx])
        tau = select_thresholds(scores, [label_sets[i] for i in held_idx], man.n_categories, cfg.prior_recall)
    else:
        tau = np.full(man.n_categories, -np.inf)
    # categories without both labels in the training subset have stand-in
    # constant models; their gates stay open no matter the policy
    for cid in range(man.n_categories):
        present = sum(1 for i in train_idx if cid in label_sets[i])
        if present == 0 or present == len(train_idx):
            tau[cid] = -np.inf
    prior.thresholds = np.asarray(tau, dtype=np.float64)
    path = prior_path(out_dir)
    prior.save(path)
    _run_log(out_dir, "train-prior", tag, cfg, {"train_images": len(train_idx), "held_out": len(held_idx)})
    return path


def stage_detect(
    cfg: PipelineConfig,
    manifest_path,
    out_dir,
    tag: Optional[str] = None,
    channel: str = "fused",
) -> Path:
    if channel not in ("fused",) + CHANNELS:
        raise ValueError(f"unknown detect channel {channel!r}")
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    props = read_proposals(_require(proposals_path(out_dir, tag), "propose"))
    channels, row_image, row_proposal, feats = _load_channel_matrices(cfg, man, out_dir, tag)
    banks = _load_banks(out_dir)
    fusion = FusionModel.load(_require(fusion_path(out_dir), "train-fusion")) if channel == "fused" else None
    regressor = BoxRegressor.load(_require(regressor_path(out_dir), "train-regressor"))
    prior = PresencePrior.load(_require(prior_path(out_dir), "train-prior"))
    prior_feats = _prior_features(cfg, man, out_dir, tag)
    n_cat = man.n_categories

    results: List[Detection] = []
    for i, im in enumerate(man.images):
        rows = np.nonzero(row_image == i)[0]
        boxes = props[im.image_id]
        if len(rows) != len(boxes):
            raise MissingArtifact(
                f"feature rows for image {im.image_id} disagree with its proposals; rerun 'extract'"
            )
        if not boxes:
            continue
        img = read_pnm(man.resolved_path(im))
        per_channel = {ch: channels[ch][rows] for ch in CHANNELS}
        if channel == "fused":
            fused = _bank_scores(per_channel, banks)
            z = (fused - fusion.feature_means) / fusion.feature_scales
            final = z @ fusion.weights.T + fusion.biases
        else:
            bank = banks[channel]
            final = per_channel[channel].astype(np.float64) @ bank.weights.T + bank.biases

        X_reg = per_channel[cfg.regress_channel].astype(np.float64)
        presence = presence_scores(prior_feats[i], prior)
        for cid in range(n_cat):
            dets = [
                Detection(image_id=im.image_id, category_id=cid, score=float(final[p, cid]), box=boxes[p])
                for p in range(len(boxes))
            ]
            dets = refine(dets, X_reg, regressor, img.width, img.height)
            dets = nms(dets, cfg.nms_iou)
            dets = filter_detections(dets, presence, prior.thresholds)
            results.extend(dets)

    path = detections_path(out_dir, tag, channel)
    with open(path, "w") as fh:
        write_detections(results, fh)
    _run_log(out_dir, f"detect-{channel}", tag, cfg, {"detections": len(results)})
    return path


def stage_eval(
    cfg: PipelineConfig,
    manifest_path,
    out_dir,
    tag: Optional[str] = None,
    channel: str = "fused",
    detections_file=None,
    report_file=None,
) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    det_path = Path(detections_file) if detections_file else detections_path(out_dir, tag, channel)
    _require(det_path, "detect")
    with open(det_path, "r") as fh:
        dets = read_detections(fh)
    report = per_class_report(dets, man.all_ground_truths(), cfg.eval_iou)
    path = Path(report_file) if report_file else report_path(out_dir, tag, channel)
    write_report(path, report)
    _run_log(out_dir, f"eval-{channel}", tag, cfg, {"mAP": modelio.fmt_float(mean_ap(report))})
    return path


def stage_compare(report_files: Dict[str, Path], out_file) -> Dict[str, int]:
    reports = {}
    for name, path in sorted(report_files.items()):
        _require(path, "eval")
        reports[name] = read_report(path)
    wins = categories_won(reports)
    with open(out_file, "w") as fh:
        for name in sorted(wins):
            fh.write(f"{name} {wins[name]}\n")
    return wins


_PALETTE = (
    (255, 40, 40),
    (40, 255, 40),
    (60, 90, 255),
    (255, 220, 0),
    (255, 0, 255),
    (0, 255, 255),
)


def stage_render(
    cfg: PipelineConfig,
    manifest_path,
    out_dir,
    tag: Optional[str] = None,
    channel: str = "fused",
    min_score: float = 0.0,
) -> Path:
    tag = tag_for(manifest_path, tag)
    out_dir = Path(out_dir)
    man = read_manifest(manifest_path)
    det_path = _require(detections_path(out_dir, tag, channel), "detect")
    with open(det_path, "r") as fh:
        dets = read_detections(fh)
    by_image: Dict[str, List[Detection]] = {}
    for d in dets:
        if d.score >= min_score:
            by_image.setdefault(d.image_id, []).append(d)

    overlay_dir = out_dir / f"overlays_{tag}"
    overlay_dir.mkdir(parents=True, exist_ok=True)
    for im in man.images:
        img = read_pnm(man.resolved_path(im))
        pixels = img.pixels.copy()
        if pixels.shape[2] == 1:
            pixels = np.repeat(pixels, 3, axis=2)
        for d in by_image.get(im.image_id, []):
            draw_rect(pixels, d.box, _PALETTE[d.category_id % len(_PALETTE)])
        write_pnm(Image.from_array(pixels), overlay_dir / f"{im.image_id}.ppm")
    _run_log(out_dir, "render", tag, cfg, {"images": len(man.images), "drawn": len(dets)})
    return overlay_dir


def stage_all(
    cfg: PipelineConfig,
    out_dir,
    train_manifest=None,
    test_manifest=None,
    train_images: int = 200,
    test_images: int = 50,
    classes: int = 3,
    max_shapes: int = 3,
    noise: float = 0.3,
    image_size: int = 96,
) -> Path:
    """The whole graph in one call; returns the test split's report path.

    Without explicit manifests a synthetic train/test pair is generated
    under out_dir/data first.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_manifest is None or test_manifest is None:
        spec = SynthSpec(
            n_classes=classes,
            n_images=train_images,
            max_shapes=max_shapes,
            noise=noise,
            image_size=image_size,
        )
        generate_dataset(out_dir / "data" / "train", spec, derive_seed(cfg.seed, "synth", "train"), prefix="tr")
        test_spec = SynthSpec(
            n_classes=classes,
            n_images=test_images,
            max_shapes=max_shapes,
            noise=noise,
            image_size=image_size,
        )
        generate_dataset(out_dir / "data" / "test", test_spec, derive_seed(cfg.seed, "synth", "test"), prefix="te")
        train_manifest = out_dir / "data" / "train" / "manifest.txt"
        test_manifest = out_dir / "data" / "test" / "manifest.txt"

    stage_propose(cfg, train_manifest, out_dir)
    stage_propose(cfg, test_manifest, out_dir)
    stage_extract(cfg, train_manifest, out_dir)
    stage_extract(cfg, test_manifest, out_dir)
    stage_train_svm(cfg, train_manifest, out_dir)
    stage_train_fusion(cfg, train_manifest, out_dir)
    stage_train_regressor(cfg, train_manifest, out_dir)
    stage_train_prior(cfg, train_manifest, out_dir)
    stage_detect(cfg, test_manifest, out_dir)
    return stage_eval(cfg, test_manifest, out_dir)
