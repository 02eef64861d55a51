#!/usr/bin/env python3
"""
Smooth Post-Stratification Estimator - Command-Line Runner
"""

import sys
import logging
from config.settings import Config
from app.cli import main as cli_main

# Configure logging from environment; stdout is reserved for the summaries
log_level = getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
handlers = [logging.StreamHandler(sys.stderr)]
if Config.LOG_FILE:
    handlers.append(logging.FileHandler(Config.LOG_FILE))
logging.basicConfig(
    level=log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)

logger = logging.getLogger(__name__)


def main():
    """Main application entry point"""
    try:
        # Validate configuration
        Config.validate_config()

        # Print configuration summary
        Config.print_config_summary()

        sys.exit(cli_main())

    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(1)
    except ValueError as e:
        logger.error(f"Invalid configuration: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
