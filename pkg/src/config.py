import os
from dotenv import load_dotenv

load_dotenv()

HIDDEN_UNITS = int(os.getenv("SCV_HIDDEN_UNITS", "256"))
L_MIN = int(os.getenv("SCV_LMIN", "25"))
SMOOTHING = float(os.getenv("SCV_SMOOTHING", "1e-6"))
FLIP_PASSES = int(os.getenv("SCV_FLIP_PASSES", "4"))

ITERATIONS = int(os.getenv("SCV_ITERATIONS", "50000"))
LEARNING_RATE = float(os.getenv("SCV_LEARNING_RATE", "0.01"))
LR_DECAY_ITERATION = int(os.getenv("SCV_LR_DECAY_ITERATION", "10000"))
LR_DECAYED = float(os.getenv("SCV_LR_DECAYED", "0.001"))
LOSS_WEIGHT = float(os.getenv("SCV_LOSS_WEIGHT", "0.5"))
REFRESH_INTERVAL = int(os.getenv("SCV_REFRESH_INTERVAL", "1000"))

MC_SAMPLES = int(os.getenv("SCV_MC_SAMPLES", "1000"))
MAX_SAMPLING_ATTEMPTS = int(float(os.getenv("SCV_MAX_SAMPLING_ATTEMPTS", "1000000")))

ORACLE_MAX_FRAMES = int(os.getenv("SCV_ORACLE_MAX_FRAMES", "14"))
ORACLE_MAX_CLASSES = int(os.getenv("SCV_ORACLE_MAX_CLASSES", "3"))

LOG_LEVEL = os.getenv("SCV_LOG_LEVEL", "INFO")
LOG_FORMAT = os.getenv("SCV_LOG_FORMAT", "%(asctime)s - %(levelname)s - %(message)s")
