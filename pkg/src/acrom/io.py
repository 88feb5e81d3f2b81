"""Persistence: binary artifacts with text headers, CSV emitters, configs.

Artifact files carry a line-oriented ASCII header (format version, kind,
metadata echo, array directory) followed by the raw little-endian
payload.  A SHA-256 of the payload is stored in the header and verified
on read, so silent corruption and truncation are detected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

ARTIFACT_VERSION = 1
ARTIFACT_KINDS = ("mesh", "snapshots", "basis", "trajectory", "checkpoint")
_MAGIC = "#acrom-artifact"


class ArtifactError(Exception):
    """Artifact file is corrupt, truncated, or unsupported."""


class ConfigError(Exception):
    """Configuration file is invalid."""


@dataclass
class ArtifactHeader:
    format_version: int
    kind: str
    meta: dict = field(default_factory=dict)
    arrays: list = field(default_factory=list)  # (name, dtype str, shape tuple)
    payload_sha256: str = ""
    payload_bytes: int = 0


def _canonical(arr: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(arr)
    if a.dtype.kind == "f":
        return a.astype("<f8", copy=False)
    if a.dtype.kind in "iu":
        return a.astype("<i8", copy=False)
    raise ArtifactError(f"unsupported array dtype {a.dtype}")


def write_artifact(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write named arrays plus metadata; byte-identical for equal inputs."""
    if kind not in ARTIFACT_KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    canon = {name: _canonical(a) for name, a in arrays.items()}
    payload = b"".join(a.tobytes() for a in canon.values())
    digest = hashlib.sha256(payload).hexdigest()

    lines = [f"{_MAGIC} v{ARTIFACT_VERSION}", f"kind={kind}"]
    for key in meta:
        val = meta[key]
        if isinstance(val, (float, np.floating)):
            val = repr(float(val))
        elif isinstance(val, (int, np.integer)):
            val = str(int(val))
        lines.append(f"meta.{key}={val}")
    for name, a in canon.items():
        shape = ",".join(str(s) for s in a.shape)
        lines.append(f"array={name} dtype={a.dtype.str} shape={shape}")
    lines.append(f"payload_sha256={digest}")
    lines.append(f"payload_bytes={len(payload)}")
    header = ("\n".join(lines) + "\n---\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_artifact(path):
    """Read an artifact, verifying version, length, and payload hash.

    Returns (ArtifactHeader, dict of arrays).
    """
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\n---\n")
    if sep < 0:
        raise ArtifactError(f"{path}: not an artifact file (missing header terminator)")
    try:
        head_lines = raw[:sep].decode("ascii").splitlines()
    except UnicodeDecodeError as e:
        raise ArtifactError(f"{path}: malformed header: {e}") from None
    payload = raw[sep + 5 :]

    if not head_lines or not head_lines[0].startswith(_MAGIC):
        raise ArtifactError(f"{path}: not an acrom artifact")
    version = head_lines[0].split("v")[-1]
    if int(version) != ARTIFACT_VERSION:
        raise ArtifactError(f"{path}: unsupported artifact version {version}")

    hdr = ArtifactHeader(format_version=int(version), kind="")
    for ln in head_lines[1:]:
        key, _, val = ln.partition("=")
        if key == "kind":
            hdr.kind = val
        elif key.startswith("meta."):
            hdr.meta[key[5:]] = val
        elif key == "array":
            name, dtype_s, shape_s = val.split(" ")
            dtype = dtype_s.split("=")[1]
            shape = tuple(int(s) for s in shape_s.split("=")[1].split(",") if s)
            hdr.arrays.append((name, dtype, shape))
        elif key == "payload_sha256":
            hdr.payload_sha256 = val
        elif key == "payload_bytes":
            hdr.payload_bytes = int(val)
        else:
            raise ArtifactError(f"{path}: unknown header line {ln!r}")

    if len(payload) != hdr.payload_bytes:
        raise ArtifactError(
            f"{path}: truncated payload ({len(payload)} bytes, header says {hdr.payload_bytes})"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != hdr.payload_sha256:
        raise ArtifactError(f"{path}: payload hash mismatch (corrupt file)")

    arrays = {}
    offset = 0
    for name, dtype, shape in hdr.arrays:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        arrays[name] = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return hdr, arrays


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------


def write_csv(path, columns: dict) -> None:
    """Write named columns; floats carry 17 significant digits."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    n = len(cols[0]) if cols else 0
    for name, c in zip(names, cols):
        if len(c) != n:
            raise ValueError(f"column {name!r} has length {len(c)}, expected {n}")
    with open(path, "w") as f:
        f.write(",".join(names) + "\n")
        for i in range(n):
            cells = []
            for c in cols:
                v = c[i]
                if np.issubdtype(c.dtype, np.floating):
                    cells.append(f"{float(v):.17g}")
                else:
                    cells.append(str(v))
            f.write(",".join(cells) + "\n")


def read_csv(path) -> dict:
    """Read a CSV written by write_csv back into named columns.

    Columns parse as float arrays where possible, else string arrays.
    """
    with open(path) as f:
        header = f.readline().strip()
        if not header:
            raise ArtifactError(f"{path}: empty CSV")
        names = header.split(",")
        rows = [ln.strip().split(",") for ln in f if ln.strip()]
    data = {}
    for i, n in enumerate(names):
        cells = [r[i] for r in rows]
        try:
            data[n] = np.array([float(c) for c in cells])
        except ValueError:
            data[n] = np.array(cells)
    return data


# ---------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------

# schema: section -> key -> (type, default); REQUIRED means no default
_REQUIRED = object()

_SCHEMA = {
    "mesh": {
        "r1": (float, 1.0),
        "r2": (float, 0.1),
        "c1": (float, 0.5),
        "c2": (float, 0.0),
        "h": (float, _REQUIRED),
    },
    "offline": {
        "nu": (float, 0.01),
        "dt": (float, _REQUIRED),
        "eps": (float, 1e-6),
        "t_start": (float, 0.0),
        "t_end": (float, _REQUIRED),
        "snapshot_every": (int, 1),
        "forcing": (str, "rotational"),
        "initial_state": (str, "rest"),
        "initial_file": (str, ""),
        "checkpoint_every": (int, 0),
    },
    "pod": {
        "r_velocity": (int, _REQUIRED),
        "r_pressure": (int, _REQUIRED),
    },
    "rom": {
        "r": (str, _REQUIRED),  # comma-separated mode counts
        "m": (str, ""),  # defaults to r
        "dt": (float, 0.0),  # 0 -> offline dt
        "t_start": (float, -1.0),  # <0 -> snapshot window start
        "t_end": (float, -1.0),  # <0 -> snapshot window end
        "eps": (float, 0.0),  # 0 -> offline eps
    },
    "convergence": {
        "dts": (str, _REQUIRED),  # comma-separated time steps
        "r": (int, _REQUIRED),
        "m": (int, 0),  # 0 -> r
        "window": (float, 0.25),
        "eps": (float, 0.0),
    },
}


@dataclass
class Config:
    """Parsed configuration; one attribute dict per present section."""

    sections: dict

    def section(self, name: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"config is missing required section [{name}]")
        return self.sections[name]

    def has(self, name: str) -> bool:
        return name in self.sections


def parse_config(path) -> Config:
    """Parse a sectioned key=value config; unknown keys are errors."""
    sections: dict[str, dict] = {}
    current = None
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1].strip()
                if name not in _SCHEMA:
                    raise ConfigError(f"{path}:{lineno}: unknown section [{name}]")
                if name in sections:
                    raise ConfigError(f"{path}:{lineno}: duplicate section [{name}]")
                sections[name] = {}
                current = name
                continue
            if current is None:
                raise ConfigError(f"{path}:{lineno}: key outside of any section")
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, found {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _SCHEMA[current]:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} in section [{current}]")
            if key in sections[current]:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            typ = _SCHEMA[current][key][0]
            try:
                sections[current][key] = typ(val)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: value {val!r} for {key!r} is not a valid {typ.__name__}"
                ) from None

    for name, body in sections.items():
        for key, (_, default) in _SCHEMA[name].items():
            if key not in body:
                if default is _REQUIRED:
                    raise ConfigError(f"{path}: section [{name}] is missing required key {key!r}")
                body[key] = default

    _validate(sections, path)
    return Config(sections)


def _validate(sections, path):
    if "mesh" in sections:
        m = sections["mesh"]
        if m["h"] <= 0:
            raise ConfigError(f"{path}: mesh h must be positive")
    if "offline" in sections:
        o = sections["offline"]
        if o["dt"] <= 0:
            raise ConfigError(f"{path}: offline dt must be positive")
        if o["eps"] <= 0:
            raise ConfigError(f"{path}: offline eps must be positive")
        if o["t_end"] <= o["t_start"]:
            raise ConfigError(f"{path}: offline t_end must exceed t_start")
        if o["snapshot_every"] < 1:
            raise ConfigError(f"{path}: snapshot_every must be >= 1")
        if o["forcing"] not in ("rotational", "zero"):
            raise ConfigError(f"{path}: forcing must be 'rotational' or 'zero'")
        if o["initial_state"] not in ("rest", "from_file"):
            raise ConfigError(f"{path}: initial_state must be 'rest' or 'from_file'")
        if o["initial_state"] == "from_file" and not o["initial_file"]:
            raise ConfigError(f"{path}: initial_state=from_file requires initial_file")
    if "pod" in sections:
        p = sections["pod"]
        if p["r_velocity"] < 1 or p["r_pressure"] < 1:
            raise ConfigError(f"{path}: pod mode counts must be >= 1")


def parse_int_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def parse_float_list(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]
