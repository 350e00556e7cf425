"""Mobility products from geolocated social-media records.

Cleaning, home inference, bivariate spatial autocorrelation, district-to-space
flow matrices and basin-merged flow maps.
"""

from .flowmap import FlowTree, WidthScale, assign_widths, build_flow_tree, generalize_polyline
from .flows import FlowBuilder, FlowMatrix, VisitEvent, build_od, detect_visits, normalize_od
from .geometry import District, PublicSpace, WeightsMatrix, build_weights, centroid, load_layers, point_in_district
from .home import HomeLocator, NightWindow, infer_home, is_night_tweet
from .ingest import CleaningConfig, TweetRecord, dedup_repeated, flag_bots, parse_record, summarize
from .stats import (
    BivariateMoran,
    MoranResult,
    classify_clusters,
    global_bivariate_moran,
    local_bivariate_moran,
    permutation_test,
    standardize,
)

__version__ = "0.1.0"

__all__ = [
    "BivariateMoran",
    "CleaningConfig",
    "District",
    "FlowBuilder",
    "FlowMatrix",
    "FlowTree",
    "HomeLocator",
    "MoranResult",
    "NightWindow",
    "PublicSpace",
    "TweetRecord",
    "VisitEvent",
    "WeightsMatrix",
    "WidthScale",
    "assign_widths",
    "build_flow_tree",
    "build_od",
    "build_weights",
    "centroid",
    "classify_clusters",
    "dedup_repeated",
    "detect_visits",
    "flag_bots",
    "generalize_polyline",
    "global_bivariate_moran",
    "infer_home",
    "is_night_tweet",
    "load_layers",
    "local_bivariate_moran",
    "normalize_od",
    "parse_record",
    "permutation_test",
    "point_in_district",
    "standardize",
    "summarize",
]
