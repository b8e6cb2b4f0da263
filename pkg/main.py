import sys

from src.cli.commands import run

if __name__ == "__main__":
  # python main.py <command> [--config path] [--seed n] ...
  sys.exit(run(sys.argv[1:]))
