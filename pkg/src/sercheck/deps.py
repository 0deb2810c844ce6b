"""Dependency labels and labeled edges shared across the checker."""

from __future__ import annotations

from typing import NamedTuple

# Vertex id of the virtual transaction that installs every initial (vid 0) version.
INIT = -1

WR = "WR"
WW = "WW"
RW = "RW"
TIME = "TIME"
PRED_WR = "PRED_WR"
PRED_RW = "PRED_RW"


class DependencyLabel(NamedTuple):
    kind: str
    key: str | None = None
    vid: int | None = None
    pred: str | None = None

    def __str__(self) -> str:
        if self.kind == TIME:
            return TIME
        parts = [self.kind]
        if self.key is not None:
            parts.append(self.key if self.vid is None else f"{self.key}:{self.vid}")
        if self.pred is not None:
            parts.append(self.pred)
        if len(parts) == 1:
            return self.kind
        return f"{self.kind}({','.join(parts[1:])})"


TIME_LABEL = DependencyLabel(TIME)


class Edge(NamedTuple):
    src: int
    dst: int
    label: DependencyLabel
