from .emd import emd_equal_distance, emd_ordered
from .io import read_hierarchies, read_table, write_table
from .tcloseness import (
    AnonTable,
    AnonymizationResult,
    Hierarchy,
    PrivacyParams,
    SensitiveKind,
    TClosenessResult,
    anonymize,
    check_t_closeness,
    lattice,
)
from .transforms import (
    ReleaseMode,
    Transform,
    ZonePolicy,
    is_pseudonym,
    minimize,
    pseudonymize,
)

__all__ = [
    "AnonTable", "AnonymizationResult", "Hierarchy", "PrivacyParams", "ReleaseMode",
    "SensitiveKind", "TClosenessResult", "Transform", "ZonePolicy", "anonymize",
    "check_t_closeness", "emd_equal_distance", "emd_ordered", "is_pseudonym", "lattice",
    "minimize", "pseudonymize", "read_hierarchies", "read_table", "write_table",
]
