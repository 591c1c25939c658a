"""
Configuration settings for the errmap package.
"""

from pathlib import Path

# Base paths
BASE_DIR = Path.cwd()
DATA_DIR = BASE_DIR / "data_desk"
LOGS_DIR = BASE_DIR / "logs"

# Numerics
GROUP_NORM_EPS = 1e-5
GDL_EPS = 1e-6
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_FLOOR = 1e-8

# Loss weights (alpha, beta, gamma)
LOSS_ALPHA = 0.3
LOSS_BETA = 0.3
LOSS_GAMMA = 0.6

# Optimizer settings
LR0 = 1e-3
POLY_POWER = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Network defaults
MODEL_DEPTH = 3
MODEL_BASE_CHANNELS = 8
MODEL_GN_GROUPS = 4
MODEL_CEU_HIDDEN = 32
MODEL_VARIANTS = ("full", "no_ceu", "plain_concat_unet")
ABLATION_BUDGET_TOLERANCE = 0.10

# Desk dataset defaults
DESK_DIMS = (32, 32, 32)
DESK_CLASSES = 4
DESK_MASKS_PER_CASE = 5
DESK_CASE_COUNT = 60
# Severity s degrades a mask to Seg.DSC 1 - DEGRADE_DSC_SPAN * s; these levels
# target the centres of the IBSR bins
SEVERITY_LEVELS = (0.15, 0.3, 0.5, 0.7, 0.9)
SEVERITY_JITTER = 0.04
MIN_PHANTOM_EXTENT = 16
MIN_CLASS_FRACTION = 0.01
PHANTOM_NOISE_SIGMA = 0.05
PHANTOM_MEAN_SPACING_SIGMAS = 4.0
PHANTOM_BIAS_AMPLITUDE = 0.1
PHANTOM_MAX_RETRIES = 50
NUM_FOLDS = 3

# Mask degradation: proposal strength at severity 1, then the Seg.DSC target
DEGRADE_MAX_RADIUS = 3
DEGRADE_MAX_FLIP_PROB = 0.8
DEGRADE_MAX_BLOBS = 10
DEGRADE_BLOB_RADIUS = (2, 5)
DEGRADE_DSC_SPAN = 0.5
DEGRADE_FIELD_SIGMA = 2.0

# Training defaults
CROP_DIMS = (16, 16, 16)
FLIP_AXES = ("x", "z")
AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
MAX_ITER = 2000
BATCH_SIZE = 1
CHECKPOINT_EVERY = 500
MASTER_SEED = 0

# Report bins: half-open (x, y] on Seg.DSC
IBSR_BIN_EDGES = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
ACDC_BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
HISTOGRAM_EDGES = tuple(round(0.1 * i, 1) for i in range(11))

# File formats
RVOL_MAGIC = "RVOL"
RVOL_VERSION = 1
RVOL_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "u1"}
CHECKPOINT_MAGIC = "ERRMAP-CKPT"
CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.yaml"

# Logging settings
OPERATION_LOG_HEADERS = [
    "timestamp",
    "operation_type",
    "case_id",
    "mask_index",
    "iteration",
    "success",
    "message",
    "error_code",
]
TRAINING_LOG_HEADERS = [
    "iteration",
    "loss_mep",
    "loss_cbft",
    "loss_ceu",
    "loss_total",
    "lr",
]
RECORD_COLUMNS = [
    "case_id",
    "mask_index",
    "severity",
    "seg_dsc",
    "seg_acc",
    "dsc",
    "acc",
    "prec",
    "recl",
    "p_acc",
    "r_er",
    "c_er",
]
