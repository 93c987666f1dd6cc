"""Thermal-IR face recognition via vesselness signatures.

Pipeline stages: face segmentation, anisotropic-diffusion detail
enhancement, inverse compositional fitting of a statistical shape and
appearance model, frontal synthesis by piecewise affine warping, multi-scale
vesselness signature extraction, and correlation-based closed-set
identification.
"""

from .aam import (
    AAM,
    AppearanceModel,
    PointDefinition,
    ShapeModel,
    load_model,
    mirror_augment,
    params_from_shape,
    procrustes_align,
    read_landmarks,
    save_model,
    shape_from_params,
    similarity_params,
    synthesize_frontal,
    train_aam,
    train_appearance_model,
    train_shape_model,
    write_landmarks,
)
from .enhancement import DiffusionConfig, anisotropic_diffuse, conductance, enhance_detail
from .errors import (
    ConstantImageError,
    DegenerateShapeError,
    EmptyMaskError,
    FitError,
    GalleryError,
    ModelFormatError,
    StageError,
    ThermoFaceError,
    ZeroVarianceError,
)
from .icaam import FitConfig, FitResult, Precomputed, compose_inverse_warp, fit, init_from_mask, precompute
from .imaging import (
    EigenPair,
    HessianField,
    ThermalImage,
    eigen2x2_sorted,
    gaussian_blur,
    hessian_at_scale,
    read_image,
    write_image,
)
from .pipeline import PipelineConfig, run_pipeline
from .recognition import (
    Gallery,
    MatchResult,
    Signature,
    cmc,
    enroll,
    identify,
    load_gallery,
    make_signature,
    ncc,
    ncc_arrays,
    save_gallery,
)
from .segmentation import (
    FaceEllipse,
    SegmentationConfig,
    SegmentationMask,
    auto_thresholds,
    fit_face_ellipse,
    morph_refine,
    segment_face,
    threshold_band,
)
from .synthetic import (
    SyntheticSubjectSpec,
    build_toy_model,
    evaluate_synthetic,
    render_synthetic_subject,
    scale_robustness_experiment,
)
from .vesselness import (
    VesselnessConfig,
    VesselnessMap,
    extract_signature,
    vesselness_at_scale,
    vesselness_multiscale,
)
from .warp import TriangulatedMesh, delaunay_mesh, piecewise_affine_warp

__version__ = "0.1.0"
