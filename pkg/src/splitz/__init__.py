"""Certified robustness for split classifiers: local Lipschitz bounds on the
left half combined with randomized smoothing of the right half."""

from .certify import GammaSearchConfig, SplitzCertificate, certify_splitz
from .data import Dataset, gen_blobs, load_csv, split
from .lipschitz import LipschitzCertificate, local_lipschitz_bound
from .network import AffineLayer, Network, forward, forward_left, forward_right
from .numerics import RngStream
from .smoothing import ABSTAIN, SmoothingCertificate, certify_smoothing
from .train import TrainConfig, train

__all__ = [
    "ABSTAIN", "AffineLayer", "Dataset", "GammaSearchConfig", "LipschitzCertificate", "Network",
    "RngStream", "SmoothingCertificate", "SplitzCertificate", "TrainConfig", "certify_smoothing",
    "certify_splitz", "forward", "forward_left", "forward_right", "gen_blobs", "load_csv", "local_lipschitz_bound", "split", "train",
]
