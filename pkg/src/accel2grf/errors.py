"""Exception types raised across the pipeline.

Grouped by stage so CLI code can map them onto exit codes without string
matching. All inherit from PipelineError.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for everything this package raises on purpose."""


# ---------------------------------------------------------------- ingest

class IngestError(PipelineError):
    pass


class MissingFile(IngestError):
    pass


class MalformedCsv(IngestError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class UnitError(IngestError):
    pass


class UnknownSensorName(IngestError):
    pass


class UpsampleRequested(IngestError):
    pass


# ----------------------------------------------------------------- align

class AlignError(PipelineError):
    pass


class DegenerateVariance(AlignError):
    pass


class NotAcceleration(AlignError):
    pass


# ------------------------------------------------------------------ gait

class GaitError(PipelineError):
    pass


class NoContact(GaitError):
    pass


class MissingSensor(GaitError):
    pass


class WindowOutOfBounds(GaitError):
    pass


class NotLeftStance(GaitError):
    pass


# ---------------------------------------------------------------- encode

class EncodeError(PipelineError):
    pass


class EmptyWindow(EncodeError):
    pass


class TooFewSamples(EncodeError):
    pass


class DimensionMismatch(EncodeError):
    pass


# ----------------------------------------------------------------- model

class ModelError(PipelineError):
    pass


class ArchitectureMismatch(ModelError):
    pass


class ChecksumMismatch(ModelError):
    pass


class NotFitted(ModelError):
    pass


# ------------------------------------------------------------------ eval

class MetricError(PipelineError):
    pass


class ZeroVariance(MetricError):
    pass


class ZeroRange(MetricError):
    pass


# ------------------------------------------------------------------- cli

class ConfigError(PipelineError):
    pass


class EmptySubset(PipelineError):
    pass
