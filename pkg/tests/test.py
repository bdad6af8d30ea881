"""
Project test script for running one test suite by name.
"""

import os
import sys
import subprocess
import argparse

# Add the parent directory to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
# set working directory to the project root (parent directory of this script directory)
os.chdir(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

SUITES = ["pomdp", "observation", "variational", "solver", "whittle", "fleet", "scenario_cli", "logging"]


def main():
    parser = argparse.ArgumentParser(description="Run one test suite")

    parser.add_argument(
        "--suite",
        choices=SUITES + ["all"],
        default="all",
        help="The suite to test",
    )
    args = parser.parse_args()

    suites = SUITES if args.suite == "all" else [args.suite]
    try:
        test_files = [f"tests/test_{suite}.py" for suite in suites]
        result = subprocess.run([sys.executable, "-m", "pytest", "-q", *test_files])
        sys.exit(result.returncode)
    except OSError as e:
        print(f"Error: {e}")
        print(f"Error type: {type(e)}")
        sys.exit(1)


if __name__ == "__main__":
    main()
