import sys
import os

# Add the project root to the python path so imports work correctly
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from ui.cli import main

if __name__ == "__main__":
    sys.exit(main())
