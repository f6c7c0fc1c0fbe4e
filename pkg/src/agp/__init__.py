"""One-shot character classification and generation with abstracted
Gaussian prototypes."""

from .config import Config, load_config
from .dataset import DatasetIndex, build_index, load_image, normalize_center, rasterize, to_point_cloud
from .errors import AgpError, ConfigError, DataError, NumericalError
from .gmm import MixtureModel, fit_gmm, sample_mixture
from .prototype import Prototype, build_agp
from .similarity import SimilarityParams, best_aligned_score, classify, score

__version__ = "0.1.0"
