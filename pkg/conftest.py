"""Make src/ importable when the package is not installed (the compiled
kernel extension is then unavailable and the numpy fallback is selected)."""

import pathlib
import sys

_src = pathlib.Path(__file__).parent / "src"
if _src.exists() and str(_src) not in sys.path:
    sys.path.insert(0, str(_src))
