"""Job execution with journaled checkpoint/resume and live parameter changes."""
from .engine import (InjectedCrash, JobRun, ProgressBus, ProgressEvent, Relay, SimClock, WallClock,
                     WorkPool)
from .job import AUTO, CredentialResolver, TransferJob
from .journal import FileEntry, Journal, JournalState, replay

__all__ = [
    "InjectedCrash", "JobRun", "ProgressBus", "ProgressEvent", "Relay", "SimClock", "WallClock",
    "WorkPool", "AUTO", "CredentialResolver", "TransferJob", "FileEntry", "Journal", "JournalState",
    "replay",
]
