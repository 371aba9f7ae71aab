"""Exception hierarchy shared by every part of the toolkit."""


class Hep2Error(Exception):
    """Base class for all toolkit errors."""


class ConfigError(Hep2Error):
    """Invalid network, training or experiment configuration."""

    def __init__(self, message, layer_index=None, line=None):
        self.layer_index = layer_index
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if layer_index is not None:
            prefix += f"layer {layer_index}: "
        super().__init__(prefix + message)


class DataError(Hep2Error):
    """Malformed or inconsistent input data (images, masks, labels, manifests)."""

    def __init__(self, message, path=None, record_index=None, line=None):
        self.path = path
        self.record_index = record_index
        self.line = line
        parts = []
        if path is not None:
            parts.append(str(path))
        if line is not None:
            parts.append(f"line {line}")
        if record_index is not None:
            parts.append(f"record {record_index}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class EvaluationError(Hep2Error):
    """A metric is undefined for the accumulated predictions."""


class LeakageError(Hep2Error):
    """A test-specimen record (or a variant of one) reached the training side."""


class InternalError(Hep2Error):
    """Violated internal invariant; indicates a bug rather than bad input."""
