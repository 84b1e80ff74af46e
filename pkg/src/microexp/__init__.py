"""2D+3D micro-expression baseline pipeline.

Preprocessing (similarity alignment + face crop for video, denoise + nose
tip + spherical crop + ICP registration for point clouds), LBP-TOP texture
features, point-cloud curvature features (HK surface types and quantized
shape index), probability-level fusion, and LOSO / repeated stratified
k-fold evaluation.
"""

from .curvature3d import (CurvatureConfig, PrincipalCurvatures, SurfaceType,
                          estimate_principal_curvatures, gaussian_mean_curvature,
                          hk_classify, landmark_local_histogram, load_landmark_subset,
                          quantize_si, sequence_feature, shape_index)
from .dataset import (DurationRule, MappingTable, NonObjectiveClass, ObjectiveClass,
                      SampleData, SampleRecord, coder_reliability, load_index,
                      nonobjective_label, objective_label, save_index,
                      validate_duration)
from .learn import (ClassDistribution, EvalResult, FusionConfig, fuse, fusion_sweep,
                    kfold_eval, loso_eval, loso_split, metrics, predict_proba,
                    read_probabilities_csv, train, write_probabilities_csv)
from .lbptop import (FeatureVector, LbpTopConfig, lbp_code, lbp_top_histogram,
                     mean_difference_weights)
from .preprocess2d import (CropResult, FrameVolume, SimilarityTransform, crop_face,
                           estimate_alignment, warp_volume)
from .preprocess3d import (IcpResult, PointCloudFrame, RigidTransform, denoise,
                           find_nose_tip, icp_align, register_sequence, spherical_crop)
from .synth import SurfaceSample, SynthSpec, make_dataset, make_surface

__version__ = "0.1.0"
