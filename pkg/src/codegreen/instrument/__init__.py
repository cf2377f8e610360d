"""Source instrumentation: find targets with tree-sitter queries, splice in shims."""

from .engine import (
    LANGUAGES,
    MARKERS,
    AlreadyInstrumented,
    CrossingRanges,
    Edit,
    GranularityConfig,
    InjectionPlan,
    InjectionTarget,
    InstrumentError,
    LoopMode,
    OffsetOutOfRange,
    ParseError,
    ReparseFailed,
    ShimTemplateMissing,
    UnsupportedLanguage,
    analyze_source,
    apply_injections,
    detect_language,
    instrument_file,
    plan_injections,
)

__all__ = [
    "LANGUAGES", "MARKERS", "AlreadyInstrumented", "CrossingRanges", "Edit",
    "GranularityConfig", "InjectionPlan", "InjectionTarget", "InstrumentError",
    "LoopMode", "OffsetOutOfRange", "ParseError", "ReparseFailed",
    "ShimTemplateMissing", "UnsupportedLanguage", "analyze_source",
    "apply_injections", "detect_language", "instrument_file", "plan_injections",
]
