"""Allow running rtfskit as a module: python -m rtfskit"""

from .cli import main
import sys

if __name__ == "__main__":
    sys.exit(main())
