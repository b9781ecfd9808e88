"""
Shared constants for the project.

Note: For artifact and cache file names, import from `curerec.cache_keys` directly:
    from curerec.cache_keys import artifact_keys
"""

from curerec.cache_keys import (
    CONFIG_ECHO_NAME,
    RUNS_CSV_NAME,
    SPLIT_MANIFEST_NAME,
)

__all__ = [
    "CONFIG_ECHO_NAME",
    "RUNS_CSV_NAME",
    "SPLIT_MANIFEST_NAME",
    # Prompt vocabulary
    "ANSWER_YES",
    "ANSWER_NO",
    "PAD_TOKEN",
    "DEFAULT_TEMPLATE",
    # Exit codes
    "EXIT_CONFIG",
    "EXIT_DIVERGENCE",
    "EXIT_ATTRIBUTION",
    "EXIT_REPORT_INPUT",
]


# Answer words; the tokenizer guarantees each is a single token
ANSWER_YES = "Yes"
ANSWER_NO = "No"
ANSWERS = (ANSWER_YES, ANSWER_NO)

PAD_TOKEN = "<pad>"

# {history} expands to one token per history item, {target} to one token
DEFAULT_TEMPLATE = (
    "user history : {history} . will the user enjoy {target} ? answer :"
)
DEFAULT_MAX_HISTORY = 10

# Ratings strictly above this are positive
DEFAULT_RATING_THRESHOLD = 3

# Node kinds of the computational DAG
NODE_INPUT = "input"
NODE_LOGITS = "logits"
KIND_ATTN = "attn"
KIND_MLP = "mlp"

# Probability clamp shared by KL, JSD and logloss
PROB_EPS = 1e-12

# Gradient norms below this skip projection and normalization
GRAD_NORM_EPS = 1e-12

# Conflict histogram buckets over cos(psi): [-1, -c), [-c, c], (c, 1]
CONFLICT_BUCKET_EDGE = 0.02
CONFLICT_BUCKETS = ("conflict", "orthogonal", "aligned")

# Unlearning methods exposed on the CLI
METHOD_CURE = "cure"
METHOD_UNIFORM = "uniform"
METHOD_GRADIENT_ASCENT = "gradient_ascent"
METHOD_PCGRAD = "pcgrad"
UNLEARN_METHODS = (METHOD_CURE, METHOD_UNIFORM, METHOD_GRADIENT_ASCENT, METHOD_PCGRAD)

# Trace CSV schema
TRACE_COLUMNS = (
    "step",
    "L_F",
    "L_R",
    "L",
    "A_f",
    "A_r",
    "cos_psi",
    "cos_psi_raw",
    "conflict_flag",
    "wall_ms",
)

# Exit codes of the management commands
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_ATTRIBUTION = 4
EXIT_REPORT_INPUT = 5

# A circuits run fails when more corrupt samples than this fraction cannot be built
MAX_CORRUPT_FAILURE_RATE = 0.2
