"""
Constants for the delay-filter system identification toolkit
"""
from enum import Enum

# Numerics
STD_FLOOR = 1e-6
GABOR_EPS = 1e-8
GABOR_BANDWIDTH_OCTAVES = 2.5
GABOR_SUPPORT_MARGIN = 2.0
LOGNORMAL_HALF_SUPPORT = 12
SIGMA_SUPPORT_MARGIN = 0.5
LEAKY_SLOPE = 0.01

# BatchNorm
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Causal convolution
CAUSAL_KERNEL_SIZE = 9

# Preprocessing
RAW_MINUTES_PER_STEP = 3
DEFAULT_WINDOW_MINUTES = 480
DEFAULT_STRIDE_MINUTES = 50
DEFAULT_PAST_STEPS = 100
DEFAULT_FUTURE_STEPS = 60
DEFAULT_ANCHOR_FRACTION = 0.2
DEFAULT_MAX_GAP_MINUTES = 20
TEMPERATURE_GROUP = "temperature"

# Evaluation
DEFAULT_EMA_ALPHA = 0.2
DEFAULT_SAMPLE_PERIOD = 16

# Files
CHECKPOINT_FORMAT_VERSION = 1
SERIES_FILE = "series.csv"
MANIFEST_FILE = "manifest.json"
GROUND_TRUTH_FILE = "ground_truth.json"
CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.json"
SAMPLE_INDEX_FILE = "index.json"
SAMPLE_ERRORS_FILE = "samples.csv"
BOXSTATS_FILE = "boxstats.csv"
ROLLING_FILE = "rolling.csv"
ABLATION_FILE = "ablation.csv"
GRADCHECK_FILE = "gradcheck.json"
RECOVERY_FILE = "recovery.csv"

# Named architectures
D_AFF_AFF_GAU = "D_AffAffGau"
D_LOG_AFF_GAU = "D_LogAffGau"


class FilterFamily(str, Enum):
    IDENTITY = "identity"
    AFFINE = "affine"
    GAUSS = "gauss"
    LOGNORMAL = "lognormal"
    GABOR = "gabor"


class FilterMode(str, Enum):
    PER_FEATURE = "per_feature"
    PER_CELL = "per_cell"


class NormKind(str, Enum):
    BATCHNORM = "batchnorm"
    AFFINE = "affine"


class TemporalKind(str, Enum):
    IDENTITY = "identity"
    AFFINE = "affine"
    GAUSS = "gauss"
    LOGNORMAL = "lognormal"
    CAUSAL_CONV = "causal_conv"


class Padding(str, Enum):
    SAME_ZERO = "same_zero"
    CAUSAL_LEFT = "causal_left"


class ColumnRole(str, Enum):
    FEATURE = "feature"
    COMMAND = "command"
    TARGET = "target"


class BlockPosition(str, Enum):
    LOW = "low"
    TEMPORAL = "temporal"
    HIGH = "high"


class SubsetKind(str, Enum):
    ALL = "all"
    COLD = "cold"
    QUIET = "quiet"
