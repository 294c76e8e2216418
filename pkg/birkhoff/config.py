from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    # Enumeration
    nmax: int = 26
    block_size: int = 2 ** 16
    workers: int = 1

    # Transfer operator / Legendre
    power_tol: float = 1e-12
    power_max_iter: int = 100_000
    q_cap: float = 2.0 ** 20
    bisection_tol: float = 1e-12

    # Restricted counting schedule: delta_n = max(delta_min, delta_c / sqrt(n))
    delta_c: float = 1.0
    delta_min: float = 0.01

    # Constrained variational oracle
    grid_resolution: int = 200
    grid_cap: int = 2_000_000

    # Moran construction
    eager_leaf_budget: int = 10 ** 6
    exhaustive_leaf_limit: int = 10 ** 4

    # Smooth systems
    transient: int = 100
    escape_bound: float = 4.0

    seed: int = 0

    log_level: str = "INFO"
    log_dir: str = "logs"
    log_file: str = ""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="BIRKHOFF_",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()
