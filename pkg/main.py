import os
import sys

# Add the parent directory to sys.path to allow importing the src package
project_dir = os.path.dirname(os.path.abspath(__file__))
if project_dir not in sys.path:
    sys.path.insert(0, project_dir)

try:
    from src.cli import main
except ImportError as e:
    print(f"Import Error: {e}")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
