"""Declarative network description and its text file format.

A network file holds one entry per line::

    # comments and blank lines are ignored
    input channels=1 height=60 width=60
    classes 6
    conv out=16 kernel=5 stride=1 pad=0
    relu
    maxpool window=2 stride=2
    flatten
    fc out=6
    softmax

``kernel`` accepts ``k`` or ``KHxKW``. Layer indices are zero-based positions
in the layer list (the ``input`` and ``classes`` lines are not layers).
"""

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import ConfigError
from .layers import output_size

KINDS = ("conv", "relu", "maxpool", "avgpool", "flatten", "fc", "softmax")
PARAMETERIZED = ("conv", "fc")
# kinds that count towards the architecture's depth; relu and flatten are
# treated as parts of the preceding layer
COUNTED = ("conv", "maxpool", "avgpool", "fc", "softmax")

_ALLOWED = {
    "conv": {"out", "kernel", "stride", "pad"},
    "relu": set(),
    "maxpool": {"window", "stride"},
    "avgpool": {"window", "stride"},
    "flatten": set(),
    "fc": {"out"},
    "softmax": set(),
}
_REQUIRED = {
    "conv": {"out", "kernel"},
    "maxpool": {"window"},
    "avgpool": {"window"},
    "fc": {"out"},
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: tuple = (0, 0)
    stride: int = 1
    padding: int = 0
    window: int = 0
    out_units: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.out_channels <= 0 or min(self.kernel) <= 0:
                raise ConfigError("conv needs positive out channels and kernel size")
            if self.padding < 0:
                raise ConfigError("conv padding must be nonnegative")
        if self.kind in ("maxpool", "avgpool") and self.window <= 0:
            raise ConfigError("pool window must be positive")
        if self.kind == "fc" and self.out_units <= 0:
            raise ConfigError("fc needs positive out units")
        if self.stride <= 0:
            raise ConfigError("stride must be positive")

    def to_line(self):
        if self.kind == "conv":
            kh, kw = self.kernel
            k = str(kh) if kh == kw else f"{kh}x{kw}"
            return f"conv out={self.out_channels} kernel={k} stride={self.stride} pad={self.padding}"
        if self.kind in ("maxpool", "avgpool"):
            return f"{self.kind} window={self.window} stride={self.stride}"
        if self.kind == "fc":
            return f"fc out={self.out_units}"
        return self.kind


def conv(out, kernel, stride=1, pad=0):
    kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    return LayerSpec("conv", out_channels=out, kernel=kernel, stride=stride, padding=pad)


def maxpool(window, stride=None):
    return LayerSpec("maxpool", window=window, stride=stride or window)


def avgpool(window, stride=None):
    return LayerSpec("avgpool", window=window, stride=stride or window)


def fc(out):
    return LayerSpec("fc", out_units=out)


RELU = LayerSpec("relu")
FLATTEN = LayerSpec("flatten")
SOFTMAX = LayerSpec("softmax")


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple
    layers: tuple
    num_classes: int = 6
    _shapes: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_shapes", self._propagate())

    def _propagate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ConfigError(f"input shape must be 3 positive ints, got {self.input_shape}")
        if self.num_classes <= 0:
            raise ConfigError("num_classes must be positive")
        if not self.layers:
            raise ConfigError("network has no layers")
        shape = self.input_shape
        shapes = [shape]
        for i, spec in enumerate(self.layers):
            if spec.kind == "softmax" and i != len(self.layers) - 1:
                raise ConfigError("softmax must be the final layer", layer_index=i)
            if spec.kind == "conv":
                if len(shape) != 3:
                    raise ConfigError("conv applied to flattened input", layer_index=i)
                c, h, w = shape
                kh, kw = spec.kernel
                shape = (
                    spec.out_channels,
                    output_size(h, kh, spec.stride, spec.padding, i),
                    output_size(w, kw, spec.stride, spec.padding, i),
                )
            elif spec.kind in ("maxpool", "avgpool"):
                if len(shape) != 3:
                    raise ConfigError("pooling applied to flattened input", layer_index=i)
                c, h, w = shape
                shape = (
                    c,
                    output_size(h, spec.window, spec.stride, 0, i, what="window"),
                    output_size(w, spec.window, spec.stride, 0, i, what="window"),
                )
            elif spec.kind == "flatten":
                shape = (_prod(shape),)
            elif spec.kind == "fc":
                shape = (spec.out_units,)
            elif spec.kind == "softmax":
                if _prod(shape) != self.num_classes:
                    raise ConfigError(
                        f"softmax input has {_prod(shape)} units, expected {self.num_classes}",
                        layer_index=i,
                    )
                shape = (self.num_classes,)
            shapes.append(shape)
        if self.layers[-1].kind != "softmax":
            raise ConfigError("final layer must be softmax", layer_index=len(self.layers) - 1)
        return tuple(shapes)

    @property
    def shapes(self):
        """Per-sample shape before layer 0 and after every layer."""
        return self._shapes

    def param_shapes(self):
        """``{layer_index: (weight_shape, bias_shape)}`` for parameterized layers."""
        out = {}
        for i, spec in enumerate(self.layers):
            in_shape = self._shapes[i]
            if spec.kind == "conv":
                out[i] = ((spec.out_channels, in_shape[0]) + spec.kernel, (spec.out_channels,))
            elif spec.kind == "fc":
                out[i] = ((spec.out_units, _prod(in_shape)), (spec.out_units,))
        return out

    def depth(self):
        """Layer count under the convention that relu/flatten are not layers."""
        return sum(spec.kind in COUNTED for spec in self.layers)

    def to_text(self):
        c, h, w = self.input_shape
        lines = [f"input channels={c} height={h} width={w}", f"classes {self.num_classes}"]
        lines += [spec.to_line() for spec in self.layers]
        return "\n".join(lines) + "\n"

    def digest(self):
        """SHA-256 of the canonical text form; identifies checkpoint compatibility."""
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()


def _prod(shape):
    out = 1
    for v in shape:
        out *= v
    return out


def _parse_kernel(value, lineno):
    try:
        if "x" in value:
            kh, kw = value.split("x")
            return int(kh), int(kw)
        return int(value), int(value)
    except ValueError:
        raise ConfigError(f"bad kernel size {value!r}", line=lineno) from None


def parse_network(text):
    """Parse the network file format into a :class:`NetworkConfig`."""
    input_shape = None
    num_classes = 6
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        kind = head.lower()
        if kind == "classes":
            if len(rest) != 1 or not rest[0].isdigit():
                raise ConfigError("expected 'classes <int>'", line=lineno)
            num_classes = int(rest[0])
            continue
        opts = {}
        for tok in rest:
            if "=" not in tok:
                raise ConfigError(f"expected key=value, got {tok!r}", line=lineno)
            key, value = tok.split("=", 1)
            opts[key.lower()] = value
        if kind == "input":
            try:
                input_shape = (int(opts["channels"]), int(opts["height"]), int(opts["width"]))
            except (KeyError, ValueError):
                raise ConfigError("input needs integer channels, height, width",
                                  line=lineno) from None
            continue
        if kind not in KINDS:
            raise ConfigError(f"unknown layer kind {head!r}", line=lineno)
        unknown = set(opts) - _ALLOWED[kind]
        if unknown:
            raise ConfigError(f"unknown option(s) for {kind}: {sorted(unknown)}", line=lineno)
        missing = _REQUIRED.get(kind, set()) - set(opts)
        if missing:
            raise ConfigError(f"{kind} missing option(s) {sorted(missing)}", line=lineno)
        try:
            if kind == "conv":
                spec = LayerSpec(
                    "conv",
                    out_channels=int(opts["out"]),
                    kernel=_parse_kernel(opts["kernel"], lineno),
                    stride=int(opts.get("stride", 1)),
                    padding=int(opts.get("pad", 0)),
                )
            elif kind in ("maxpool", "avgpool"):
                window = int(opts["window"])
                spec = LayerSpec(kind, window=window, stride=int(opts.get("stride", window)))
            elif kind == "fc":
                spec = LayerSpec("fc", out_units=int(opts["out"]))
            else:
                spec = LayerSpec(kind)
        except ValueError as exc:
            raise ConfigError(f"bad integer option: {exc}", line=lineno) from None
        except ConfigError as exc:
            raise ConfigError(str(exc), line=lineno) from None
        layers.append(spec)
    if input_shape is None:
        raise ConfigError("missing 'input' line")
    return NetworkConfig(input_shape, layers, num_classes)


def load_network(path):
    return parse_network(Path(path).read_text(encoding="utf-8"))


def default_network():
    """The shipped 10-layer architecture for 60x60 single-channel cells."""
    text = resources.files("hep2cnn.nn").joinpath("default.net").read_text(encoding="utf-8")
    return parse_network(text)


def small_network(num_classes=6, input_shape=(1, 60, 60)):
    """A compact network for desk-scale experiments on synthetic data."""
    return NetworkConfig(
        input_shape,
        [
            avgpool(2),
            conv(8, 3),
            RELU,
            maxpool(2),
            conv(8, 1),
            RELU,
            maxpool(2),
            FLATTEN,
            fc(num_classes),
            SOFTMAX,
        ],
        num_classes,
    )
