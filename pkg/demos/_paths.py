from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
MUTAG = ROOT / "tests" / "data" / "MUTAG"
