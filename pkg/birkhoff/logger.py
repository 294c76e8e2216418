import logging
import sys
from pathlib import Path
from datetime import datetime
from .config import settings


def setup_logger(level: str = None, log_file: str = None):
    """Setup toolkit logger with console and optional file handlers"""

    logger = logging.getLogger("birkhoff")
    logger.setLevel(getattr(logging, (level or settings.log_level).upper()))

    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    )

    # console output goes to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    log_file = settings.log_file if log_file is None else log_file
    if log_file:
        log_dir = Path(settings.log_dir)
        log_dir.mkdir(exist_ok=True)

        file_handler = logging.FileHandler(
            log_dir / f"{datetime.now().strftime('%Y-%m-%d')}_{log_file}"
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    return logger


logger = setup_logger()
