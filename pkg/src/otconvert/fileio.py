"""Binary feature/model formats, flat-text run configs, CSV interop.

Feature file layout (little-endian throughout):

    8 bytes  magic "OTFEAT01"
    1 byte   dtype code: 0 = float64, 1 = float32
    u64      rows
    u64      cols
    u16      tag byte length, then that many UTF-8 bytes
    payload  rows*cols values, row-major

Model file layout:

    8 bytes  magic "OTMODL01"
    1 byte   kind: 0 = velocity_field, 1 = not_pair
    1 byte   model flags (bit 0: nonpositivity transform on the potential)
    u32      config echo byte length, then UTF-8 text
    1 byte   network count (1 for velocity_field; 2 for not_pair, map first)
    per network:
        1 byte   layer count, then u32 per layer dim
        1 byte   activation: 0 = relu, 1 = tanh
        1 byte   network flags (bit 0: time-conditioned)
        u32      condition input width
    u64      total parameter count
    payload  parameters as float64, weights/biases interleaved per layer

All writes are atomic: a temp file in the target directory, then rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .nn import MlpModel

FEATURE_MAGIC = b"OTFEAT01"
MODEL_MAGIC = b"OTMODL01"
_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_NAMES = {"float64": 0, "float32": 1}
_ACTIVATION_CODES = {"relu": 0, "tanh": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}
MODEL_KINDS = ("velocity_field", "not_pair")


def atomic_write_bytes(path, data: bytes):
    """Write data to path via a same-directory temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class FeatureData:
    values: np.ndarray
    tag: str = ""


def write_feature_file(path, values, tag: str = ""):
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-d, got shape {values.shape}")
    if values.dtype == np.float64:
        code = 0
    elif values.dtype == np.float32:
        code = 1
    else:
        values = values.astype(np.float64)
        code = 0
    tag_bytes = tag.encode("utf-8")
    if len(tag_bytes) > 0xFFFF:
        raise ValidationError("tag exceeds 65535 encoded bytes")
    header = FEATURE_MAGIC + struct.pack(
        "<BQQH", code, values.shape[0], values.shape[1], len(tag_bytes)
    )
    payload = np.ascontiguousarray(values, dtype=_DTYPE_CODES[code]).tobytes()
    atomic_write_bytes(path, header + tag_bytes + payload)


def read_feature_file(path) -> FeatureData:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != FEATURE_MAGIC:
        raise ValidationError(
            f"{path}: not a feature file (magic {blob[:8]!r})"
        )
    if len(blob) < 8 + 1 + 8 + 8 + 2:
        raise ValidationError(f"{path}: truncated feature header")
    code, rows, cols, tag_len = struct.unpack_from("<BQQH", blob, 8)
    if code not in _DTYPE_CODES:
        raise ValidationError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    offset = 8 + 1 + 8 + 8 + 2
    tag = blob[offset:offset + tag_len].decode("utf-8")
    offset += tag_len
    expected = rows * cols * dtype.itemsize
    if len(blob) - offset != expected:
        raise ValidationError(
            f"{path}: payload holds {len(blob) - offset} bytes,"
            f" header promises {expected}"
        )
    values = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=offset)
    return FeatureData(values=values.reshape(rows, cols).copy(), tag=tag)


def _pack_network(model: MlpModel) -> bytes:
    dims = model.layer_dims
    if len(dims) > 0xFF:
        raise ValidationError("too many layers to serialize")
    out = struct.pack("<B", len(dims))
    out += struct.pack(f"<{len(dims)}I", *dims)
    out += struct.pack("<B", _ACTIVATION_CODES[model.activation])
    out += struct.pack("<B", 1 if model.time_conditioned else 0)
    out += struct.pack("<I", model.condition_dim)
    return out


def _unpack_network(blob, offset):
    (n_dims,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    dims = struct.unpack_from(f"<{n_dims}I", blob, offset)
    offset += 4 * n_dims
    act_code, net_flags = struct.unpack_from("<BB", blob, offset)
    offset += 2
    (condition_dim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if act_code not in _ACTIVATION_NAMES:
        raise ValidationError(f"unknown activation code {act_code}")
    return {
        "layer_dims": tuple(int(d) for d in dims),
        "activation": _ACTIVATION_NAMES[act_code],
        "time_conditioned": bool(net_flags & 1),
        "condition_dim": int(condition_dim),
    }, offset


def _network_param_count(desc) -> int:
    dims = desc["layer_dims"]
    total = 0
    fan_in = dims[0]
    if desc["time_conditioned"]:
        fan_in += 1
    fan_in += desc["condition_dim"]
    for out_dim in dims[1:]:
        total += fan_in * out_dim + out_dim
        fan_in = out_dim
    return total


def _flatten_params(model: MlpModel) -> np.ndarray:
    return np.concatenate([p.reshape(-1) for p in model.parameters()])


def _rebuild_model(desc, flat: np.ndarray) -> MlpModel:
    dims = desc["layer_dims"]
    weights = []
    biases = []
    cursor = 0
    fan_in = dims[0] + (1 if desc["time_conditioned"] else 0) + desc["condition_dim"]
    for out_dim in dims[1:]:
        w = flat[cursor:cursor + fan_in * out_dim].reshape(fan_in, out_dim).copy()
        cursor += fan_in * out_dim
        b = flat[cursor:cursor + out_dim].copy()
        cursor += out_dim
        weights.append(w)
        biases.append(b)
        fan_in = out_dim
    return MlpModel(layer_dims=dims, weights=weights, biases=biases,
                    activation=desc["activation"],
                    time_conditioned=desc["time_conditioned"],
                    condition_dim=desc["condition_dim"])


def _write_model_file(path, kind_code, model_flags, networks, config_text):
    blob = MODEL_MAGIC + struct.pack("<BB", kind_code, model_flags)
    config_bytes = config_text.encode("utf-8")
    blob += struct.pack("<I", len(config_bytes)) + config_bytes
    blob += struct.pack("<B", len(networks))
    flats = []
    for model in networks:
        blob += _pack_network(model)
        flats.append(_flatten_params(model))
    flat = np.concatenate(flats) if flats else np.empty(0)
    blob += struct.pack("<Q", flat.size)
    blob += np.ascontiguousarray(flat, dtype="<f8").tobytes()
    atomic_write_bytes(path, blob)


def _read_model_file(path):
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != MODEL_MAGIC:
        raise ValidationError(f"{path}: not a model file (magic {blob[:8]!r})")
    kind_code, model_flags = struct.unpack_from("<BB", blob, 8)
    if kind_code >= len(MODEL_KINDS):
        raise ValidationError(f"{path}: unknown model kind code {kind_code}")
    offset = 10
    (config_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    config_text = blob[offset:offset + config_len].decode("utf-8")
    offset += config_len
    (n_networks,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    descs = []
    for _ in range(n_networks):
        desc, offset = _unpack_network(blob, offset)
        descs.append(desc)
    (param_count,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    expected = sum(_network_param_count(d) for d in descs)
    if param_count != expected:
        raise ValidationError(
            f"{path}: parameter payload holds {param_count} values,"
            f" architecture needs {expected}"
        )
    if len(blob) - offset != 8 * param_count:
        raise ValidationError(f"{path}: truncated parameter payload")
    flat = np.frombuffer(blob, dtype="<f8", count=param_count, offset=offset)
    models = []
    cursor = 0
    for desc in descs:
        count = _network_param_count(desc)
        models.append(_rebuild_model(desc, flat[cursor:cursor + count]))
        cursor += count
    return MODEL_KINDS[kind_code], model_flags, models, config_text


def write_velocity_field(path, field, config_text: str = ""):
    """Serialize a trained velocity field; config_text is echoed verbatim."""
    _write_model_file(path, 0, 0, [field.model], config_text)


def read_velocity_field(path):
    from .flow import VelocityField

    kind, _, models, config_text = _read_model_file(path)
    if kind != "velocity_field":
        raise ValidationError(f"{path}: holds a {kind}, not a velocity_field")
    model = models[0]
    return VelocityField(model=model, dim=model.layer_dims[0]), config_text


def write_not_pair(path, pair, config_text: str = ""):
    flags = 1 if pair.nonpositivity_transform else 0
    _write_model_file(path, 1, flags, [pair.map_model, pair.potential_model],
                      config_text)


def read_not_pair(path):
    from .neural import NotModelPair

    kind, flags, models, config_text = _read_model_file(path)
    if kind != "not_pair":
        raise ValidationError(f"{path}: holds a {kind}, not a not_pair")
    pair = NotModelPair(map_model=models[0], potential_model=models[1],
                        nonpositivity_transform=bool(flags & 1))
    return pair, config_text


def parse_kv_text(text: str) -> dict:
    """Parse `key = value` lines; `#` starts a comment; blank lines skipped.

    Duplicate keys are rejected (a silent last-wins would hide typos in
    hand-edited configs).
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValidationError(f"line {lineno}: empty key")
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv_text(mapping: dict, header: str = "") -> str:
    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key in sorted(mapping):
        lines.append(f"{key} = {_format_value(mapping[key])}")
    return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def coerce_value(key: str, raw: str, kind: str):
    """Parse one config value by declared kind; errors name the key."""
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
        if kind == "int_tuple":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if kind == "optional_float":
            return None if raw.lower() == "none" else float(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {kind}")
    raise ValidationError(f"config key {key!r}: unknown kind {kind!r}")


def resolve_config(raw: dict, schema: dict) -> dict:
    """Validate raw string pairs against {key: (kind, default-or-REQUIRED)}.

    Unknown keys are rejected naming the key; missing required keys too.
    """
    unknown = set(raw) - set(schema)
    if unknown:
        raise ValidationError(
            f"unknown config key(s): {', '.join(sorted(unknown))}"
        )
    resolved = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            resolved[key] = coerce_value(key, raw[key], kind)
        elif default is REQUIRED:
            raise ValidationError(f"missing required config key {key!r}")
        else:
            resolved[key] = default
    return resolved


class _Required:
    def __repr__(self):
        return "REQUIRED"


REQUIRED = _Required()


def export_csv(path, values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"CSV export needs a 2-d array, got shape {values.shape}")
    lines = [",".join(repr(v) for v in row) for row in values.tolist()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def import_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(part) for part in line.split(",")]
            except ValueError:
                raise ValidationError(f"{path}: line {lineno} is not numeric")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValidationError(
                    f"{path}: line {lineno} has {len(row)} columns, expected {width}"
                )
            rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)
