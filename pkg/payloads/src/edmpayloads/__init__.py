"""Reference analysis payloads for the research pipeline engine.

The engine's scripted backend serves these scripts as canned agent
responses; they run inside the engine's sandbox and communicate with it
only through files: prepared split CSVs in, results.json plus prediction,
table, and figure artifacts out.
"""

from .generator import (
    FAILING_MODES,
    failing_payload,
    reference_analysis_script,
    write_payload,
)
from .manifest import (
    DESK_BATTERY,
    DESK_BATTERY_REGRESSION,
    FULL_BATTERY,
    SHAP_TIMEOUT_SENTINEL,
    PayloadManifest,
    failing_manifest,
    reference_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "DESK_BATTERY",
    "DESK_BATTERY_REGRESSION",
    "FAILING_MODES",
    "FULL_BATTERY",
    "PayloadManifest",
    "SHAP_TIMEOUT_SENTINEL",
    "failing_manifest",
    "failing_payload",
    "reference_analysis_script",
    "reference_manifest",
    "write_payload",
]
