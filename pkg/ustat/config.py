import os
from dotenv import load_dotenv

load_dotenv()

class Settings:
    ENUMERATION_CAP: int = int(os.getenv("USTAT_ENUMERATION_CAP", str(10**8)))
    TABLE_CAP: int = int(os.getenv("USTAT_TABLE_CAP", str(5 * 10**6)))  # rows of a per-block subset table
    MATERIALIZE_CAP: int = int(os.getenv("USTAT_MATERIALIZE_CAP", str(10**7)))  # largest Lambda a sampler loops over
    CHUNK_SIZE: int = int(os.getenv("USTAT_CHUNK_SIZE", str(2**16)))
    N_JOBS: int = int(os.getenv("USTAT_N_JOBS", "1"))
    OUTPUT_DIR: str = os.getenv("USTAT_OUTPUT_DIR", "./reports")
    DEFAULT_SEED: int = int(os.getenv("USTAT_DEFAULT_SEED", "0"))
    LOG_LEVEL: str = os.getenv("USTAT_LOG_LEVEL", "INFO")



settings = Settings()
