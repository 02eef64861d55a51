import os
import logging
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Estimator configuration - All settings loaded from environment variables"""

    # ============================================================================
    # Logging Settings
    # ============================================================================
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', '')

    # ============================================================================
    # Stage 1: Kernel Smoothing
    # ============================================================================
    KERNEL = os.getenv('KERNEL', 'gaussian')
    BANDWIDTH_METHOD = os.getenv('BANDWIDTH_METHOD', 'lscv')
    LSCV_GRID_POINTS = int(os.getenv('LSCV_GRID_POINTS', '20'))

    # ============================================================================
    # Stage 2: Local Log-Linear Fitting
    # ============================================================================
    NEWTON_MAX_ITER = int(os.getenv('NEWTON_MAX_ITER', '200'))
    NEWTON_GRADIENT_TOL = float(os.getenv('NEWTON_GRADIENT_TOL', '1e-9'))
    COEFFICIENT_BOUND = float(os.getenv('COEFFICIENT_BOUND', '30'))  # |u| beyond this means separation
    SELECTION_CRITERION = os.getenv('SELECTION_CRITERION', 'bic')
    STEPWISE_MIN_LISTS = int(os.getenv('STEPWISE_MIN_LISTS', '5'))

    # ============================================================================
    # Estimation Settings
    # ============================================================================
    PSI_FLOOR = float(os.getenv('PSI_FLOOR', '1e-3'))
    MAX_WORKERS = int(os.getenv('MAX_WORKERS', '4'))

    # ============================================================================
    # Bootstrap Settings
    # ============================================================================
    BOOTSTRAP_REPS = int(os.getenv('BOOTSTRAP_REPS', '1000'))
    BOOTSTRAP_LEVEL = float(os.getenv('BOOTSTRAP_LEVEL', '0.9'))
    BOOTSTRAP_MAX_FAILED_FRACTION = float(os.getenv('BOOTSTRAP_MAX_FAILED_FRACTION', '0.1'))
    DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '20130204'))

    # ============================================================================
    # File Storage
    # ============================================================================
    BIRDS_FIXTURE = os.getenv(
        'BIRDS_FIXTURE',
        os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data', 'birds.csv')
    )
    OUTPUT_DIR = os.getenv('OUTPUT_DIR', '.')

    @classmethod
    def validate_config(cls):
        """Validate that every configured value is usable"""
        invalid = []

        if cls.KERNEL not in ('gaussian', 'boxcar'):
            invalid.append(f"KERNEL={cls.KERNEL}")
        if cls.BANDWIDTH_METHOD not in ('lscv', 'fixed'):
            invalid.append(f"BANDWIDTH_METHOD={cls.BANDWIDTH_METHOD}")
        if cls.LSCV_GRID_POINTS < 1:
            invalid.append(f"LSCV_GRID_POINTS={cls.LSCV_GRID_POINTS}")
        if cls.NEWTON_MAX_ITER < 1:
            invalid.append(f"NEWTON_MAX_ITER={cls.NEWTON_MAX_ITER}")
        if cls.NEWTON_GRADIENT_TOL <= 0:
            invalid.append(f"NEWTON_GRADIENT_TOL={cls.NEWTON_GRADIENT_TOL}")
        if cls.COEFFICIENT_BOUND <= 0:
            invalid.append(f"COEFFICIENT_BOUND={cls.COEFFICIENT_BOUND}")
        if cls.SELECTION_CRITERION not in ('bic', 'aicc'):
            invalid.append(f"SELECTION_CRITERION={cls.SELECTION_CRITERION}")
        if not 0 < cls.PSI_FLOOR <= 1:
            invalid.append(f"PSI_FLOOR={cls.PSI_FLOOR}")
        if cls.MAX_WORKERS < 1:
            invalid.append(f"MAX_WORKERS={cls.MAX_WORKERS}")
        if cls.BOOTSTRAP_REPS < 2:
            invalid.append(f"BOOTSTRAP_REPS={cls.BOOTSTRAP_REPS}")
        if not 0 < cls.BOOTSTRAP_LEVEL < 1:
            invalid.append(f"BOOTSTRAP_LEVEL={cls.BOOTSTRAP_LEVEL}")
        if not 0 <= cls.BOOTSTRAP_MAX_FAILED_FRACTION < 1:
            invalid.append(f"BOOTSTRAP_MAX_FAILED_FRACTION={cls.BOOTSTRAP_MAX_FAILED_FRACTION}")

        if invalid:
            raise ValueError(
                f"Invalid configuration values: {', '.join(invalid)}\n"
                f"Please check your environment or the .env file (see .env.example)."
            )

        if cls.OUTPUT_DIR != '.':
            os.makedirs(cls.OUTPUT_DIR, exist_ok=True)

        return True

    @classmethod
    def print_config_summary(cls):
        """Log a summary of current configuration (for debugging)"""
        logger = logging.getLogger(__name__)
        logger.info("=" * 70)
        logger.info("Smooth Post-Stratification Configuration")
        logger.info("=" * 70)
        logger.info(f"Kernel: {cls.KERNEL} (bandwidth method={cls.BANDWIDTH_METHOD}, grid={cls.LSCV_GRID_POINTS})")
        logger.info(f"Newton: max_iter={cls.NEWTON_MAX_ITER}, tol={cls.NEWTON_GRADIENT_TOL:g}, bound={cls.COEFFICIENT_BOUND:g}")
        logger.info(f"Selection: {cls.SELECTION_CRITERION} (stepwise from k={cls.STEPWISE_MIN_LISTS})")
        logger.info(f"Psi Floor: {cls.PSI_FLOOR:g}")
        logger.info(f"Workers: {cls.MAX_WORKERS}")
        logger.info(f"Bootstrap: B={cls.BOOTSTRAP_REPS}, level={cls.BOOTSTRAP_LEVEL}, seed={cls.DEFAULT_SEED}")
        logger.info(f"Output Directory: {cls.OUTPUT_DIR}")
        logger.info("=" * 70)
