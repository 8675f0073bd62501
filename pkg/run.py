import sys

from nonlocal_acf.main import main


if __name__ == "__main__":
    sys.exit(main())
