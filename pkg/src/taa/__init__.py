from src.taa.accumulator import (
    Reprojection,
    TaaSequence,
    TaaState,
    default_tau,
    reproject,
    run_taa_sequence,
    taa_accumulate,
)

__all__ = [
    "Reprojection",
    "TaaSequence",
    "TaaState",
    "default_tau",
    "reproject",
    "run_taa_sequence",
    "taa_accumulate",
]
