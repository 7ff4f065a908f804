"""Scripted mock backend.

A ScriptTable plants the value string each (document id, attribute name)
slot should produce. scripted_next() hands out those values token by
token and returns DELIM once a value is exhausted or the slot is unknown,
which is how absent attributes fall out as nulls. The scripted backend
ignores attention masks and positions entirely; it exists to pin down
pass counting, pruning, and harness arithmetic independently of model
quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ContractError
from .tokens import DELIM, tokenize


@dataclass
class ScriptTable:
    entries: dict[tuple[str, str], str] = field(default_factory=dict)
    _token_cache: dict[tuple[str, str], list[int]] = field(
        default_factory=dict, repr=False)

    @classmethod
    def from_records(cls, records) -> "ScriptTable":
        """Build from DatasetRecord labels; null labels are simply absent."""
        entries: dict[tuple[str, str], str] = {}
        for rec in records:
            for attr, value in (rec.labels or {}).items():
                if value is not None:
                    entries[(rec.id, attr)] = value
        return cls(entries=entries)

    def target_tokens(self, doc_id: str, attribute: str) -> list[int]:
        key = (doc_id, attribute)
        if key not in self._token_cache:
            value = self.entries.get(key)
            self._token_cache[key] = [] if value is None else tokenize(value)
        return self._token_cache[key]


def scripted_next(script: ScriptTable, doc_id: str, attribute: str,
                  emitted: list[int]) -> int:
    """Next token of the planted value after `emitted`; DELIM when done.

    `emitted` must be a prefix the script itself produced, which holds for
    the decode loops here; a diverged prefix means the caller broke the
    one-token-per-step contract.
    """
    target = script.target_tokens(doc_id, attribute)
    k = len(emitted)
    if k > len(target):
        raise ContractError(
            f"emitted prefix longer than scripted value for {(doc_id, attribute)}")
    return target[k] if k < len(target) else DELIM
