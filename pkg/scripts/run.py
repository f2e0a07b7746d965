"""Launch the CLI from a source checkout without installing the package."""
import sys
from pathlib import Path

# Agrega src al path
sys.path.append(str(Path(__file__).resolve().parents[1] / "src"))

from follower_agnostic.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
