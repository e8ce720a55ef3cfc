import logging

from app.cli import cli, configure_logging
from config.config import LOG_LEVEL

configure_logging(LOG_LEVEL)

logger = logging.getLogger("frailty")


if __name__ == "__main__":
    cli()
