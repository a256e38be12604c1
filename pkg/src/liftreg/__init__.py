"""Point-cloud registration with 2D image features lifted onto 3D points."""

__version__ = "0.1.0"

from .camera import CameraIntrinsics, CameraView, back_project, project_point, visible
from .dataset import DatasetManifest, ScenePair, export_ply, load_pair, read_manifest, write_manifest
from .errors import (
    ConfigurationError,
    DatasetIOError,
    DegenerateSampleError,
    FormatError,
    GenerationError,
    InsufficientInputError,
    LiftRegError,
    ManifestVersionError,
    ValidationError,
)
from .features import FeatureProvider, FeatureProviderKind, match_images
from .geometry import (
    CorrespondenceSet,
    PointCloud,
    RigidTransform,
    apply_transform,
    compose,
    invert,
    nearest_neighbor,
    voxel_downsample,
)
from .lift import AugmentedCloud, CoverageMask, LiftConfig, LiftMode, coverage_report, lift_explicit, lift_implicit
from .metrics import BenchmarkReport, MetricThresholds, feature_matching_recall, inlier_ratio, registration_recall, rmse
from .registration import RansacConfig, RegistrationResult, estimate_rigid, icp_refine, match_features, ransac_register
