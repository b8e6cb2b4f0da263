import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

console = Console(stderr=True)


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger once per process.

    Args:
        level: Log level name ("DEBUG", "INFO", ...)
        log_file: Optional path; when given, records are also written there
                  in plain text.

    Returns:
        The package root logger.
    """
    handlers = [RichHandler(console=console, show_path=False, rich_tracebacks=False)]
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        handlers.append(file_handler)

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(message)s",
        datefmt="[%X]",
        handlers=handlers,
        force=True,
    )
    return logging.getLogger("src")
