"""Mesh-alignment feedback regression at desk scale.

A toy articulated body, a software rasterizer for dense-correspondence
ground truth, a pyramid-feature encoder, and the iterative residual
regressor that re-samples features at the current mesh projection.
"""

from .body import (BodyParams, KinematicTree, MeshState, TemplateBody, downsample_mesh,
                   forward, identity_pose, load_body, make_toy_body, matrix_to_rot6d,
                   mean_params, rot6d_to_matrix, save_body)
from .camera import CameraParams, from_pixel, project, to_pixel
from .config import ModelSpec, RunConfig, build_body, get_spec, paper_spec, toy_spec
from .encoder import FeaturePyramid, PyramidEncoder
from .errors import (CheckpointMismatchError, ConfigurationError, DegenerateAlignmentError,
                     DegenerateRotationError, GenerationError, MeshFeedbackError,
                     TrainingDivergedError)
from .losses import LossWeights, aux_loss, reg_loss, total_loss
from .maf import LoopConfig, LoopTrace, MAFNetwork, ParamRegressor, loop_for_mode
from .metrics import (SimilarityTransform, mpjpe, oks, oks_ap, pa_mpjpe, procrustes_align,
                      pve, seg_scores, write_report)
from .raster import (IUVMap, downsample_iuv, fb_mask, part_segmentation, rasterize_iuv,
                     render_input)
from .sampling import PointFeatureExtractor, SamplePoints, bilinear_sample, grid_points, \
    mesh_aligned_points
from .synth import GroundTruthSample, SynthDataset, load_dataset, make_dataset, sample_params
from .train import (ablation_matrix, build_network, evaluate_model, model_from_checkpoint,
                    train_model)

__version__ = "0.1.0"
