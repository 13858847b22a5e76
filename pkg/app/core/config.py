import os
from pydantic_settings import BaseSettings
from pydantic import computed_field
from dotenv import load_dotenv

# Load environment variables from .env
load_dotenv()


class Settings(BaseSettings):
    # Base config
    DEBUG: bool = os.getenv("DEBUG", "false").lower() in ("true", "1", "t")
    PROJECT_NAME: str = os.getenv("PROJECT_NAME", "Kernel Cascade Forecasting")
    VERSION: str = "1.0.0"
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    ALLOWED_HOSTS: str = os.getenv("ALLOWED_HOSTS", "localhost,127.0.0.1,0.0.0.0,testserver")

    # Experiments
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "out")
    # the HTTP API only reads dataset files below this directory
    DATA_DIR: str = os.getenv("DATA_DIR", "data")
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", 0))
    SWEEP_WORKERS: int = int(os.getenv("SWEEP_WORKERS", 2))

    # Numerical floors
    EIGEN_FLOOR: float = float(os.getenv("EIGEN_FLOOR", 1e-12))
    PIVOT_FLOOR: float = float(os.getenv("PIVOT_FLOOR", 1e-12))

    @computed_field
    @property
    def ALLOWED_HOST_LIST(self) -> list[str]:
        return [host.strip() for host in self.ALLOWED_HOSTS.split(",") if host.strip()]

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()
