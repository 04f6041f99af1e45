import sys

from app.cli.cli_commands import main


if __name__ == "__main__":
    sys.exit(main())
