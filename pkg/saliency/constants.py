"""
Shared constants used across all saliency modules.

Centralises magic numbers, default hyper-parameters, and tunables so they
live in exactly one place.
"""

# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------

DTYPE = "float64"
METRIC_EPS = 1e-8             # denominators in every metric
LOSS_CLAMP = 1e-7             # log clamp in the BCE term
IOU_SMOOTH = 1.0              # numerator/denominator smoothing of the IoU loss
GRADCHECK_STEP = 1e-5         # central finite-difference step
GRADCHECK_TOLERANCE = 1e-3
GRADCHECK_FLOOR = 1e-6        # denominator floor of the relative error
GRADCHECK_SAMPLES = 20        # coordinates probed per parameter

# ---------------------------------------------------------------------------
# Architecture
# ---------------------------------------------------------------------------

FEATURE_CHANNELS = 32         # every pyramid level after channel normalisation
SIZE_MULTIPLE = 32
MIN_INPUT_SIZE = 64
DESK_INPUT_SIZE = 64
FULL_INPUT_SIZE = 352
DESK_STUB_CHANNELS = (16, 32, 48, 64)
FULL_STUB_CHANNELS = (64, 128, 320, 512)

ATTENTION_GROUPS = 4          # shuffle groups == number of attention maps
DIRECTIONAL_KERNEL = 5
DIRECTIONAL_OUT_CHANNELS = 8
DIRECTIONS = ("h", "v", "ld", "rd")
SA_KERNEL = 7
FUSION_KERNEL = 3
SGE_EPS = 1e-5               # variance floor of group-wise enhancement
UPSAMPLE_FACTORS = (2, 4, 8)

# ---------------------------------------------------------------------------
# Optimisation (full-scale training protocol)
# ---------------------------------------------------------------------------

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DEFAULT_EPOCHS = 45
DEFAULT_BATCH_SIZE = 8
DEFAULT_LR = 1e-4
DEFAULT_LR_DECAY = 0.1
DEFAULT_LR_DECAY_EVERY = 30

# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

BETA_SQUARED = 0.3
S_ALPHA = 0.5
NUM_THRESHOLDS = 256

# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GELENET1"
CHECKPOINT_FILE = "checkpoint.bin"
LOSS_TRACE_FILE = "loss_trace.csv"
RESOLVED_CONFIG_FILE = "config.cfg"
THREADS_ENV = "GELENET_THREADS"

# ---------------------------------------------------------------------------
# CLI exit codes
# ---------------------------------------------------------------------------

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
