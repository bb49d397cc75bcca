"""
Configuration for the tracker.
Loads settings from environment variables with sensible defaults.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Seed used whenever a command or config does not set one explicitly
DEFAULT_SEED = int(os.getenv("TCR3_SEED", "0"))

LOG_LEVEL = os.getenv("TCR3_LOG_LEVEL", "INFO")

# Synthetic scene defaults (desk scale: 64x64, 12-frame clips)
DEFAULT_IMAGE_SIZE = int(os.getenv("TCR3_IMAGE_SIZE", "64"))
DEFAULT_NUM_FRAMES = int(os.getenv("TCR3_NUM_FRAMES", "12"))
DEFAULT_VISIBILITY_TOL = float(os.getenv("TCR3_VISIBILITY_TOL", "0.01"))

# Codec
DEFAULT_PATCH_SIZE = int(os.getenv("TCR3_PATCH_SIZE", "4"))
DEFAULT_LATENT_CHANNELS = int(os.getenv("TCR3_LATENT_CHANNELS", "48"))

# Transformer
DEFAULT_MODEL_DIM = int(os.getenv("TCR3_MODEL_DIM", "64"))
DEFAULT_HEADS = int(os.getenv("TCR3_HEADS", "4"))
DEFAULT_LAYERS = int(os.getenv("TCR3_LAYERS", "4"))
DEFAULT_LORA_RANK = int(os.getenv("TCR3_LORA_RANK", "8"))
DEFAULT_ROPE_THETA = float(os.getenv("TCR3_ROPE_THETA", "10000"))

# Training
DEFAULT_LEARNING_RATE = float(os.getenv("TCR3_LEARNING_RATE", "1e-3"))
DEFAULT_BATCH_SIZE = int(os.getenv("TCR3_BATCH_SIZE", "4"))
DEFAULT_VIS_WEIGHT = float(os.getenv("TCR3_VIS_WEIGHT", "0.1"))

# Evaluation
METRIC_THRESHOLDS = (0.1, 0.3, 0.5, 1.0)
PROJECTION_VISIBILITY_TOL = float(os.getenv("TCR3_PROJECTION_VISIBILITY_TOL", "0.10"))
