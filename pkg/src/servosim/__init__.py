"""Visual servoing simulator: dense-feature matching, IBVS control, and a
deterministic benchmark harness with pluggable descriptor providers."""

from .bench import (BenchmarkReport, SceneConfig, TrialRecord, aggregate,
                    alpha_sweep, compute_ape, compute_length_ratio,
                    run_benchmark, run_trial, run_trials)
from .config import BenchmarkConfig, build_benchmark_config, load_benchmark_config
from .control import (ControllerConfig, FeatureObservation, MatcherConfig,
                      ServoController, compensate_rotation, ema_filter,
                      feature_error, interaction_matrix, pbvs_reference,
                      velocity_command)
from .descriptors import (DescriptorGrid, ProviderConfig, bin_features, extract,
                          grid_cell_to_pixel)
from .geometry import (CameraIntrinsics, Pose, Twist, integrate_twist, look_at,
                       pixel_to_normalized, pose_error, project)
from .matching import (Correspondence, CorrespondenceSet, cyclical_distance_map,
                       nearest_neighbor, select_correspondences)
from .perturb import PerturbationConfig, perturb
from .simenv import (PlanarTarget, PoseSampleConfig, RenderedView, desired_pose,
                     make_poster_texture, render, sample_initial_poses)

__version__ = "0.1.0"
