"""Synthetic faces, pseudo-paired ground truth and augmentation."""
from .augment import AugmentParams, augment, augment_image
from .faces import CLASSES, DOMAINS, FaceConfig, ParsedImage, generate_face
from .histogram import histogram_match
from .pairs import FaceBank, PairSpec, PseudoPair, enumerate_pairs, make_pseudo_pair
from .warp import Triangulation, piecewise_affine_warp, triangulate

__all__ = [
    "AugmentParams",
    "CLASSES",
    "DOMAINS",
    "FaceBank",
    "FaceConfig",
    "PairSpec",
    "ParsedImage",
    "PseudoPair",
    "Triangulation",
    "augment",
    "augment_image",
    "enumerate_pairs",
    "generate_face",
    "histogram_match",
    "make_pseudo_pair",
    "piecewise_affine_warp",
    "triangulate",
]
