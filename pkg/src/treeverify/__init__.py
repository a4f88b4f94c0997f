"""Robustness verification for decision trees and tree ensembles."""

from .clique import (
    BoundResult,
    CliqueSet,
    PseudoNode,
    bound_dp,
    bound_naive,
    CapExceeded,
    build_level0,
    clique_enum,
    exact_max_clique,
    multi_level_bound,
    parts_from_boxes,
    top_level,
)
from .ensemble import (
    Ensemble,
    Internal,
    Leaf,
    ModelFormatError,
    Tree,
    emit_native_json,
    extract_binary_pair,
    load_model,
    parse_native_json,
    parse_xgboost_json,
    route,
)
from .geometry import (
    Box,
    Interval,
    InvalidInput,
    ball_box,
    box_intersect,
    box_intersects_ball,
    interval_intersect,
    point_box_distance,
)
from .single_tree import compute_leaf_boxes, tree_attack, verify_tree_boxes, verify_tree_linear
from .verifier import (
    Decision,
    VerificationReport,
    VerifyConfig,
    certify,
    certify_batch,
    certify_radius,
    certify_untargeted_multiclass,
    decide_at_eps,
    decide_box_query,
    exact_vstar_oracle,
    feature_importance,
    find_anchors,
)

__version__ = "0.1.0"

__all__ = [
    "BoundResult",
    "Box",
    "CapExceeded",
    "CliqueSet",
    "Decision",
    "Ensemble",
    "Internal",
    "Interval",
    "InvalidInput",
    "Leaf",
    "ModelFormatError",
    "PseudoNode",
    "Tree",
    "VerificationReport",
    "VerifyConfig",
    "ball_box",
    "bound_dp",
    "bound_naive",
    "box_intersect",
    "box_intersects_ball",
    "build_level0",
    "certify",
    "certify_batch",
    "certify_radius",
    "certify_untargeted_multiclass",
    "clique_enum",
    "compute_leaf_boxes",
    "decide_at_eps",
    "decide_box_query",
    "emit_native_json",
    "exact_max_clique",
    "exact_vstar_oracle",
    "extract_binary_pair",
    "feature_importance",
    "find_anchors",
    "interval_intersect",
    "load_model",
    "multi_level_bound",
    "parse_native_json",
    "parse_xgboost_json",
    "parts_from_boxes",
    "point_box_distance",
    "route",
    "top_level",
    "tree_attack",
    "verify_tree_boxes",
    "verify_tree_linear",
]
