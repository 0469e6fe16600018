"""Batch preprocessing: manifest in, per-record images out.

Every output depends only on its own record and the config, so results
are byte-identical no matter how many workers run, and interrupted
runs can resume by checksum.  Per-record failures are logged, counted,
and compared against the failure threshold instead of aborting the
whole batch at the first bad file.
"""
import hashlib
import multiprocessing
import os
from dataclasses import dataclass

from . import __version__
from .clahe import ClaheParams, apply_clahe
from .errors import CxrPrepError, EmptyMaskError, FailureThresholdError
from .image import downscale, export_8bit, load_image, save_image
from .masks import (
    BinaryMask,
    apply_mask,
    bounding_box,
    crop,
    dilate,
    letterbox_to_square,
    resample_mask,
    scale_bbox,
    scaled_margin,
)

METHODS = ("baseline", "clahe", "masking", "cropping")
MASK_METHODS = ("masking", "cropping")


@dataclass(frozen=True)
class PrepJob:
    record_id: str
    image_path: str
    mask_path: str  # "" when unused
    method: str
    out_path: str
    out8_path: str  # "" when 8-bit export is off
    comment: str
    config_hash: str


@dataclass
class PrepOutcome:
    record_id: str
    status: str   # ok | kept | failed
    detail: str


def _clahe_params(cfg):
    return ClaheParams(grid_rows=cfg.grid_rows, grid_cols=cfg.grid_cols,
                       clip_limit=cfg.clip_limit, bins=cfg.bins)


def _load_mask(path, native_resolution):
    raster = load_image(path)
    return BinaryMask(bits=raster.pixels > 0, native_resolution=native_resolution)


def preprocess_record(image_path, mask_path, method, cfg):
    """Run one record through the selected method; returns a GrayImage."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    img = load_image(image_path)
    t = cfg.target_size

    if method == "baseline":
        return downscale(img, t, t)

    if method == "clahe":
        params = _clahe_params(cfg)
        if cfg.clahe_after_downscale:
            return apply_clahe(downscale(img, t, t), params)
        return downscale(apply_clahe(img, params), t, t)

    mask = _load_mask(mask_path, cfg.mask_native_resolution)
    if not mask.bits.any():
        raise EmptyMaskError(f"{mask_path}: segmentation has no set pixel")
    radius = scaled_margin(cfg.margin, mask.width, cfg.mask_native_resolution)

    if method == "masking":
        grown = dilate(mask, radius)
        aligned = resample_mask(grown, img.width, img.height)
        return downscale(apply_mask(img, aligned, background=0), t, t)

    # method == "cropping"
    box_source = mask if cfg.crop_raw_mask else dilate(mask, radius)
    box = scale_bbox(bounding_box(box_source),
                     mask.height, mask.width, img.height, img.width)
    cut = crop(img, box)
    if cfg.letterbox:
        cut = letterbox_to_square(cut, background=0)
    return downscale(cut, t, t)


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _sidecar_path(path):
    return path + ".sha256"


def _write_sidecar(path, config_hash):
    digest = _sha256_file(path)
    size = os.path.getsize(path)
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(f"{digest} {size} {config_hash}\n")


def _sidecar_valid(path, config_hash):
    side = _sidecar_path(path)
    if not (os.path.exists(path) and os.path.exists(side)):
        return False
    with open(side, encoding="utf-8") as fh:
        parts = fh.read().split()
    if len(parts) != 3 or parts[2] != config_hash:
        return False
    if int(parts[1]) != os.path.getsize(path):
        return False
    return parts[0] == _sha256_file(path)


def run_job(job, cfg, resume):
    """Process one record; used directly and as the pool worker."""
    try:
        if resume and _sidecar_valid(job.out_path, job.config_hash) and (
                not job.out8_path or _sidecar_valid(job.out8_path, job.config_hash)):
            return PrepOutcome(job.record_id, "kept", "")
        out = preprocess_record(job.image_path, job.mask_path, job.method, cfg)
        save_image(out, job.out_path, comment=job.comment)
        _write_sidecar(job.out_path, job.config_hash)
        if job.out8_path:
            save_image(export_8bit(out), job.out8_path, comment=job.comment)
            _write_sidecar(job.out8_path, job.config_hash)
        return PrepOutcome(job.record_id, "ok", "")
    except FileNotFoundError as exc:
        return PrepOutcome(job.record_id, "failed", f"missing file: {exc.filename}")
    except (CxrPrepError, ValueError) as exc:
        return PrepOutcome(job.record_id, "failed",
                           f"{type(exc).__name__}: {exc}")


@dataclass
class PrepResult:
    outcomes: list       # PrepOutcome, sorted by record_id
    n_ok: int
    n_kept: int
    n_failed: int


def _pool_worker(args):
    job, cfg, resume = args
    return run_job(job, cfg, resume)


def run_prep(records, method, cfg, images_root, masks_root, out_dir,
             tool_version=None, resume=False):
    """Preprocess every record; returns a PrepResult.

    Raises FailureThresholdError when the failed fraction exceeds
    cfg.failure_threshold (strictly greater).
    """
    version = tool_version or __version__
    config_hash = cfg.config_hash()
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    images8_dir = os.path.join(out_dir, "images8")
    if cfg.export_8bit:
        os.makedirs(images8_dir, exist_ok=True)
    comment = f"cxrprep {version} config={config_hash} method={method}"

    jobs = []
    for r in sorted(records, key=lambda r: r.record_id):
        mask_path = ""
        if method in MASK_METHODS:
            mask_path = os.path.join(masks_root, r.mask_path) if r.mask_path else ""
        # outputs keep the input's container format
        ext = os.path.splitext(r.image_path)[1].lower()
        if ext not in (".png", ".pgm"):
            ext = ".png"
        jobs.append(PrepJob(
            record_id=r.record_id,
            image_path=os.path.join(images_root, r.image_path),
            mask_path=mask_path,
            method=method,
            out_path=os.path.join(images_dir, f"{r.record_id}{ext}"),
            out8_path=(os.path.join(images8_dir, f"{r.record_id}.png")
                       if cfg.export_8bit else ""),
            comment=comment,
            config_hash=config_hash,
        ))

    if cfg.workers == 1:
        outcomes = [run_job(job, cfg, resume) for job in jobs]
    else:
        with multiprocessing.Pool(cfg.workers) as pool:
            outcomes = list(pool.imap_unordered(
                _pool_worker, [(job, cfg, resume) for job in jobs],
                chunksize=max(1, len(jobs) // (cfg.workers * 4) or 1)))
    outcomes.sort(key=lambda o: o.record_id)

    n_ok = sum(1 for o in outcomes if o.status == "ok")
    n_kept = sum(1 for o in outcomes if o.status == "kept")
    n_failed = sum(1 for o in outcomes if o.status == "failed")

    log_path = os.path.join(out_dir, "prep_log.csv")
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("#cxrprep_prep_v1\n")
        fh.write(f"#tool_version={version}\n")
        fh.write(f"#config_hash={config_hash}\n")
        fh.write(f"#method={method}\n")
        fh.write("record_id,status,detail\n")
        for o in outcomes:
            detail = o.detail.replace('"', "'")
            cell = f'"{detail}"' if ("," in detail or "\n" in detail) else detail
            fh.write(f"{o.record_id},{o.status},{cell}\n")

    result = PrepResult(outcomes=outcomes, n_ok=n_ok, n_kept=n_kept,
                        n_failed=n_failed)
    total = len(outcomes)
    if total and n_failed / total > cfg.failure_threshold:
        raise FailureThresholdError(
            f"{n_failed}/{total} records failed "
            f"({n_failed / total:.2%} > {cfg.failure_threshold:.2%}); "
            f"see {log_path}")
    return result
