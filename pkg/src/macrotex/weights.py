"""Convolution weight files and Gaussian re-sampling of trained weights.

A weights set is a UTF-8 text manifest plus one little-endian float32 blob::

    # macrotex conv weights v1
    blob: vgg.bin
    input_offset: 0.485 0.456 0.406
    layer 1 kernel=3,3,3,64 stride=1 padding=zero phi=relu offset=0 length=7168
    layer 2 kernel=3,3,64,64 stride=1 padding=zero phi=relu offset=7168 length=147712

``kernel`` lists ``(kh, kw, in, out)``. Inside a layer's byte range the
weights come first in ``(out, in, kh, kw)`` order, followed by the
``out`` biases. ``input_offset`` is optional. No weights ship with the
package.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .features import NONLINEARITIES, PADDING_MODES, ConvLayer, ConvNetSpec

__all__ = ["load_weights", "save_weights", "randomize_weights"]

_HEADER = "# macrotex conv weights v1"


def _parse_layer(line, lineno):
    tokens = line.split()
    if len(tokens) < 2 or not tokens[1].isdigit():
        raise FormatError(f"line {lineno}: expected 'layer <index> key=value ...'")
    name = f"layer {tokens[1]}"
    fields = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise FormatError(f"{name}: malformed token {tok!r}")
        fields[key] = value
    missing = {"kernel", "offset", "length"} - fields.keys()
    if missing:
        raise FormatError(f"{name}: missing {sorted(missing)}")
    try:
        kernel = tuple(int(v) for v in fields["kernel"].split(","))
        offset = int(fields["offset"])
        length = int(fields["length"])
        stride = int(fields.get("stride", "1"))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc
    if len(kernel) != 4 or min(kernel) < 1:
        raise FormatError(f"{name}: kernel must be kh,kw,in,out with positive entries")
    phi = fields.get("phi", "softplus")
    if phi not in NONLINEARITIES:
        raise FormatError(f"{name}: unknown nonlinearity {phi!r}")
    padding = fields.get("padding", "periodic")
    if padding not in PADDING_MODES:
        raise FormatError(f"{name}: unknown padding mode {padding!r}")
    return name, dict(kernel=kernel, offset=offset, length=length, stride=stride, phi=phi, padding=padding)


def load_weights(manifest_path):
    """Read a manifest and its blob into a :class:`ConvNetSpec`.

    Stored float32 values are reproduced exactly (widened to float64).
    """
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    blob_name = None
    offset_vals = None
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("blob:"):
            blob_name = line.split(":", 1)[1].strip()
        elif line.startswith("input_offset:"):
            try:
                offset_vals = tuple(float(v) for v in line.split(":", 1)[1].split())
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad input_offset") from exc
        elif line.startswith("layer"):
            layers.append(_parse_layer(line, lineno))
        else:
            raise FormatError(f"line {lineno}: unrecognised entry {line!r}")
    if blob_name is None:
        raise FormatError(f"{manifest_path}: no 'blob:' entry")
    if not layers:
        raise FormatError(f"{manifest_path}: no layers")
    blob_path = manifest_path.parent / blob_name
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weight blob {blob_path}: {exc}") from exc

    conv_layers = []
    for name, meta in layers:
        kh, kw, cin, cout = meta["kernel"]
        n_w = cout * cin * kh * kw
        expected = 4 * (n_w + cout)
        if meta["length"] != expected:
            raise FormatError(f"{name}: length {meta['length']} does not match kernel shape (expected {expected})")
        start, stop = meta["offset"], meta["offset"] + meta["length"]
        if start < 0 or stop > len(blob):
            raise FormatError(f"{name}: byte range [{start}, {stop}) exceeds blob size {len(blob)} (truncated blob)")
        vals = np.frombuffer(blob[start:stop], dtype="<f4").astype(np.float64)
        weight = vals[:n_w].reshape(cout, cin, kh, kw)
        bias = vals[n_w:]
        if conv_layers and conv_layers[-1].out_channels != cin:
            raise FormatError(f"{name}: expects {cin} input channels, previous layer gives {conv_layers[-1].out_channels}")
        conv_layers.append(ConvLayer(weight, bias, stride=meta["stride"], padding=meta["padding"], phi=meta["phi"]))
    try:
        return ConvNetSpec(tuple(conv_layers), input_offset=offset_vals)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc)) from exc


def save_weights(net, manifest_path, blob_name=None):
    """Write ``net`` as a manifest plus float32 blob next to it."""
    manifest_path = Path(manifest_path)
    blob_name = blob_name or manifest_path.stem + ".bin"
    lines = [_HEADER, f"blob: {blob_name}"]
    if net.input_offset is not None:
        lines.append("input_offset: " + " ".join(repr(v) for v in net.input_offset))
    chunks = []
    offset = 0
    for j, layer in enumerate(net.layers, 1):
        cout, cin, kh, kw = layer.weight.shape
        data = np.concatenate([layer.weight.reshape(-1), layer.bias]).astype("<f4").tobytes()
        lines.append(
            f"layer {j} kernel={kh},{kw},{cin},{cout} stride={layer.stride} "
            f"padding={layer.padding} phi={layer.phi} offset={offset} length={len(data)}"
        )
        chunks.append(data)
        offset += len(data)
    (manifest_path.parent / blob_name).write_bytes(b"".join(chunks))
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def randomize_weights(template, stream):
    """Replace every filter by i.i.d. Gaussian draws with the template's moments.

    For each layer and each output channel the new weights are drawn from
    ``N(m, s^2)`` where ``m`` and ``s`` are the mean and (population)
    standard deviation of that channel's template weights. Biases, strides,
    padding and nonlinearities are kept.
    """
    layers = []
    for layer in template.layers:
        w = layer.weight
        flat = w.reshape(w.shape[0], -1)
        mean = flat.mean(axis=1, keepdims=True)
        std = flat.std(axis=1, keepdims=True)
        z = stream.normal(flat.shape)
        new = (mean + std * z).reshape(w.shape)
        layers.append(ConvLayer(new, layer.bias, stride=layer.stride, padding=layer.padding, phi=layer.phi))
    return ConvNetSpec(tuple(layers), input_offset=template.input_offset)
