from .crypto import KdfParams, KeyRing, derive_key, load_master_secret, unlock
from .queue import QueueRecord, QueueStore, RecoveryReport, Status
from .seclog import GENESIS, LogVerification, SecurityLog, SecurityLogEntry, chain_digest

__all__ = [
    "GENESIS", "KdfParams", "KeyRing", "LogVerification", "QueueRecord", "QueueStore",
    "RecoveryReport", "SecurityLog", "SecurityLogEntry", "Status", "chain_digest",
    "derive_key", "load_master_secret", "unlock",
]
