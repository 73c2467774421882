"""Put the project root on sys.path so tests import scripts.pvlab like the runner does."""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT))
