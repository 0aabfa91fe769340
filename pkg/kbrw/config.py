import os

from dotenv import load_dotenv


load_dotenv()


class Config:
    # Parallelism
    WORKERS = int(os.getenv("KBRW_WORKERS", "1"))

    # Logging
    LOG_LEVEL = os.getenv("KBRW_LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("KBRW_LOG_FILE", "")  # JSON lines; empty = stderr only

    # Exact solvers
    MAX_STATES = int(os.getenv("KBRW_MAX_STATES", "0"))  # 0 = solver.json max_states

    # Artifacts / declarative defaults
    OUTPUT_DIR = os.getenv("KBRW_OUTPUT_DIR", "out")
    CONFIG_DIR = os.getenv("KBRW_CONFIG_DIR", "config")
