"""End-to-end pipeline: raw frame in, canonical identity signature out.

Stage order is fixed: segment the face, enhance detail on the suppressed
image, initialize the model from the mask, fit by inverse composition,
synthesize the frontal canonical view from the suppressed image, and extract
the vesselness signature over the canonical support. Errors carry the name
of the stage that raised them; a fit that did not converge is recorded in
the signature metadata rather than failing the pipeline.

The configuration bundles each stage's parameters and hashes all numeric
values; the diffusion scale ``k`` is configured on the 0..255 intensity
convention and divided by 255 here because pipeline images are normalized
to [0, 1] by the file readers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion

from .aam import AAM, synthesize_frontal
from .enhancement import DiffusionConfig, enhance_detail
from .errors import StageError, ThermoFaceError
from .hashing import canonical_hash
from .icaam import FitConfig, Precomputed, fit, init_from_mask, precompute
from .imaging import ThermalImage, write_image
from .recognition import Signature
from .segmentation import SegmentationConfig, disc_element, segment_face
from .vesselness import VesselnessConfig, extract_signature

__all__ = ["PipelineConfig", "run_pipeline"]

CONFIG_FORMAT_VERSION = 1
SIGNATURE_RIM_MARGIN = 3.0


@dataclass(frozen=True)
class PipelineConfig:
    """All stage parameters plus model/gallery paths, with a content hash."""

    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    vesselness: VesselnessConfig = field(default_factory=VesselnessConfig)
    model_path: str = ""
    gallery_path: str = ""

    def numeric_params(self) -> dict:
        seg = self.segmentation
        dif = self.diffusion
        fit_cfg = self.fit
        params = {
            "segmentation.t_low": seg.t_low,
            "segmentation.t_up": seg.t_up,
            "segmentation.threshold_mode": seg.threshold_mode,
            "segmentation.se_area_fraction": seg.se_area_fraction,
            "diffusion.k": dif.k,
            "diffusion.iterations": dif.iterations,
            "diffusion.dt": dif.dt,
            "diffusion.exponent_mode": dif.exponent_mode,
            "fit.max_iterations": fit_cfg.max_iterations,
            "fit.param_tol": fit_cfg.param_tol,
            "fit.error_tol": fit_cfg.error_tol,
            "fit.damping": fit_cfg.damping,
        }
        params.update(self.vesselness.numeric_params())
        return params

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.numeric_params())

    def effective_diffusion(self) -> DiffusionConfig:
        """Diffusion settings rescaled to [0, 1] intensities (k divided by 255)."""
        return replace(self.diffusion, k=self.diffusion.k / 255.0)

    def save(self, path) -> None:
        payload = {
            "format_version": CONFIG_FORMAT_VERSION,
            "model_path": self.model_path,
            "gallery_path": self.gallery_path,
            "params": self.numeric_params(),
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        payload = json.loads(Path(path).read_text())
        if payload.get("format_version") != CONFIG_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported config version")
        p = payload["params"]
        return cls(
            segmentation=SegmentationConfig(
                t_low=p["segmentation.t_low"],
                t_up=p["segmentation.t_up"],
                threshold_mode=p["segmentation.threshold_mode"],
                se_area_fraction=p["segmentation.se_area_fraction"],
            ),
            diffusion=DiffusionConfig(
                k=p["diffusion.k"],
                iterations=p["diffusion.iterations"],
                dt=p["diffusion.dt"],
                exponent_mode=p["diffusion.exponent_mode"],
            ),
            fit=FitConfig(
                max_iterations=p["fit.max_iterations"],
                param_tol=p["fit.param_tol"],
                error_tol=p["fit.error_tol"],
                damping=p["fit.damping"],
            ),
            vesselness=VesselnessConfig(
                beta=p["vesselness.beta"],
                c_struct=p["vesselness.c_struct"],
                s_min=p["vesselness.s_min"],
                s_max=p["vesselness.s_max"],
                s_step=p["vesselness.s_step"],
                gamma=p["vesselness.gamma"],
                formula_mode=p["vesselness.formula_mode"],
            ),
            model_path=payload.get("model_path", ""),
            gallery_path=payload.get("gallery_path", ""),
        )


def _stage(name: str, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except ThermoFaceError as exc:
        raise StageError(name, exc) from exc


def run_pipeline(
    img: ThermalImage,
    model: AAM,
    cfg: PipelineConfig,
    subject_id: str = "",
    image_id: str = "probe",
    pre: Precomputed | None = None,
    dump_dir=None,
) -> Signature:
    """Run segment, enhance, init, fit, frontal synthesis, and signature.

    A precomputed solver state may be shared across calls on one model.
    With ``dump_dir`` set, each stage writes its artifact as an image for
    inspection. Identical inputs and configuration produce bit-identical
    signatures.
    """
    if pre is None:
        pre = _stage("precompute", precompute, model)
    mask, suppressed = _stage("segment", segment_face, img, cfg.segmentation)
    enhanced = _stage("enhance", enhance_detail, suppressed, cfg.effective_diffusion())
    init = _stage("init", init_from_mask, mask, model)
    result = _stage("fit", fit, enhanced, init, model, pre, cfg.fit)
    if not result.converged:
        warnings.warn(f"{image_id}: fit did not converge ({result.iterations} iterations)")
    # the signature comes from the detail layer: vessels survive the high
    # pass, the smooth face structure shared across subjects does not
    frontal = _stage("frontal", synthesize_frontal, enhanced, result.landmarks, model)
    # the suppression step leaves a strong artificial edge along the mesh
    # rim; keep it out of the signature and its sensitivity calibration
    signature_mask = binary_erosion(
        model.support_mask(), structure=disc_element(SIGNATURE_RIM_MARGIN), border_value=0
    )
    signature_map = _stage(
        "signature", extract_signature, frontal, signature_mask, cfg.vesselness
    )
    meta = {
        "image_id": image_id,
        "fit_error": float(result.error),
        "fit_iterations": int(result.iterations),
        "converged": bool(result.converged),
        "scales": list(signature_map.scales),
        "pipeline_hash": cfg.config_hash,
    }
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        write_image(dump_dir / f"{image_id}_mask.pgm", mask.data.astype(np.float64), bits=8)
        write_image(dump_dir / f"{image_id}_suppressed.pgm", suppressed, bits=16)
        detail = enhanced.data
        span = detail.max() - detail.min()
        scaled = (detail - detail.min()) / span if span > 0 else detail * 0.0
        write_image(dump_dir / f"{image_id}_enhanced.pgm", scaled, bits=16)
        write_image(dump_dir / f"{image_id}_frontal.pgm", frontal, bits=16)
        write_image(dump_dir / f"{image_id}_signature.pgm", signature_map.values, bits=16)
    # the gallery-compatibility hash covers every numeric stage parameter,
    # not only the vesselness block
    return Signature(
        values=signature_map.values,
        mask=signature_mask,
        subject_id=subject_id,
        image_id=image_id,
        config_hash=cfg.config_hash,
        meta=meta,
    )
