"""Callback-granularity diff between an original and an instrumented app.

"Modified" is structural: the canonical callback digests differ. That over-
approximates semantic change — a semantically equal rewrite still gets tested,
which is safe, just not minimal.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import AppModel, canonical_hash


@dataclass(frozen=True)
class CallbackDiff:
    """Partition of both apps' callback names by change class."""

    modified: tuple[str, ...]
    added: tuple[str, ...]
    removed: tuple[str, ...]
    unchanged: tuple[str, ...]

    def all_names(self) -> tuple[str, ...]:
        return self.modified + self.added + self.removed + self.unchanged


def diff_apps(original: AppModel, instrumented: AppModel) -> CallbackDiff:
    """Classify every callback name found in either app.

    In both and digests differ → modified; digests equal → unchanged; only in
    instrumented → added; only in original → removed. Shared and removed names
    keep the original's declaration order, added names the instrumented's.
    """
    orig = {cb.name: cb for cb in original.callbacks}
    instr = {cb.name: cb for cb in instrumented.callbacks}

    modified: list[str] = []
    unchanged: list[str] = []
    removed: list[str] = []
    for name, cb in orig.items():
        if name not in instr:
            removed.append(name)
        elif canonical_hash(cb) != canonical_hash(instr[name]):
            modified.append(name)
        else:
            unchanged.append(name)
    added = [name for name in instr if name not in orig]
    return CallbackDiff(tuple(modified), tuple(added), tuple(removed), tuple(unchanged))


def diff_to_json_dict(diff: CallbackDiff) -> dict:
    return {
        "modified": list(diff.modified),
        "added": list(diff.added),
        "removed": list(diff.removed),
        "unchanged": list(diff.unchanged),
    }
