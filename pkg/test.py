import os
import sys

import pytest

if __name__ == "__main__":
    # Keep the persistent point cache out of test runs
    os.environ["USE_PERSISTENT_CACHE"] = "False"

    # Run pytest with verbosity; extra arguments (e.g. -m "not slow") pass through
    sys.exit(pytest.main(["-v", "tests/", *sys.argv[1:]]))
