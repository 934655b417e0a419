"""Leaf/wood separation of tree point clouds.

Training samples are picked automatically from plane-fit residuals, and an
RBF-kernel SVM then labels every point from its ``(x, y, z, c_lambda, rho)``
features.
"""

from .errors import (ConfigError, ConvergenceError, LeafWoodError, NumericalError, ParseError,
                     SingleClassError, UnsupportedFormatError)
from .evaluation import ConfusionMatrix, confusion, kappa, metrics, overall_accuracy
from .features import change_of_curvature, compute_features, eigenvalues_sym3, local_covariance, \
    local_density
from .io import LEAF, WOOD, PointCloud, read_cloud, read_labels, read_ply, read_xyz, \
    write_classified_ply, write_labels
from .sampling import PROFILES, SampleProfile, TrainingSet, auto_select_training, fit_plane, \
    seed_sphere_training, select_candidates, training_from_labels
from .spatial import NeighborSet, SpatialIndex, build_index, knn
from .svm import SvmHyperparams, SvmModel, classify_cloud, load_model, predict, save_model, train
from .synthgen import TreeSpec, generate_suite, generate_tree

__version__ = "0.1.0"
