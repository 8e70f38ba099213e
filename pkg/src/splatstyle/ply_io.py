"""Binary PLY input/output for Gaussian scenes.

Reads and writes the field layout used by the common 3DGS tooling:
x, y, z, f_dc_0..2, f_rest_*, opacity, scale_0..2, rot_0..3 as
little-endian float32. The loader accepts extra properties (e.g. normals)
and any property order; the writer emits exactly the canonical set.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch

from .cloud import GaussianCloud
from .errors import PlyFormatError, UnsupportedEncodingError

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}

_SCALAR_FIELDS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def _parse_header(f) -> tuple[int, list[tuple[str, str]]]:
    line = f.readline().decode("ascii", errors="replace").strip()
    if line != "ply":
        raise PlyFormatError("not a PLY file (missing 'ply' magic)")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        raw = f.readline()
        if not raw:
            raise PlyFormatError("header ended before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            parts = line.split()
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise UnsupportedEncodingError(
                    f"unsupported PLY encoding {parts[1] if len(parts) > 1 else '?'}; "
                    "only binary_little_endian is supported"
                )
        elif line.startswith("element"):
            parts = line.split()
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                in_vertex = False
        elif line.startswith("property"):
            if not in_vertex:
                continue
            parts = line.split()
            if parts[1] == "list":
                raise UnsupportedEncodingError("list properties are not supported")
            dtype, name = parts[1], parts[2]
            if dtype not in _PLY_TYPES:
                raise PlyFormatError(f"unknown property type {dtype!r}")
            props.append((name, dtype))
        elif line == "end_header":
            break
    if count is None:
        raise PlyFormatError("missing 'element vertex' declaration")
    return count, props


def _degree_from_rest(names: set[str]) -> tuple[int, list[str]]:
    rest = sorted(
        (n for n in names if n.startswith("f_rest_")),
        key=lambda n: int(n.split("_")[-1]),
    )
    total = len(rest)
    if total == 0:
        return 0, []
    expected = [f"f_rest_{i}" for i in range(total)]
    if rest != expected:
        raise PlyFormatError("f_rest_* indices are not contiguous from 0")
    if total % 3 != 0:
        raise PlyFormatError(f"f_rest count {total} is not divisible by 3")
    per_channel = total // 3
    degree = int(round(math.sqrt(per_channel + 1))) - 1
    if (degree + 1) ** 2 - 1 != per_channel or degree > 3:
        raise PlyFormatError(f"f_rest count {total} does not match any SH degree <= 3")
    return degree, rest


def load_ply(path) -> GaussianCloud:
    """Load a Gaussian scene from a binary little-endian PLY file.

    Quaternions are renormalized after load; all other values are kept
    verbatim (converted to float64 for computation).
    """
    path = Path(path)
    with open(path, "rb") as f:
        count, props = _parse_header(f)
        names = {name for name, _ in props}
        for field in _SCALAR_FIELDS:
            if field not in names:
                raise PlyFormatError(f"missing required field {field!r}")
        degree, rest_names = _degree_from_rest(names)

        dtype = np.dtype([(name, _PLY_TYPES[t]) for name, t in props])
        body = f.read(count * dtype.itemsize)
        if len(body) != count * dtype.itemsize:
            raise PlyFormatError(
                f"truncated body: expected {count * dtype.itemsize} bytes, got {len(body)}"
            )
        rows = np.frombuffer(body, dtype=dtype, count=count)

    def stack(fields: list[str]) -> torch.Tensor:
        if not fields:
            return torch.empty((count, 0), dtype=torch.float64)
        cols = [rows[name].astype(np.float64) for name in fields]
        return torch.from_numpy(np.stack(cols, axis=1)) if count else torch.empty(
            (0, len(fields)), dtype=torch.float64
        )

    rotations = stack([f"rot_{i}" for i in range(4)])
    if count > 0:
        norms = torch.linalg.norm(rotations, dim=1, keepdim=True)
        if torch.any(norms == 0):
            raise PlyFormatError("zero-norm quaternion in input")
        rotations = rotations / norms

    cloud = GaussianCloud(
        positions=stack(["x", "y", "z"]),
        rotations=rotations,
        log_scales=stack([f"scale_{i}" for i in range(3)]),
        opacity_logits=stack(["opacity"]).reshape(count),
        sh_dc=stack([f"f_dc_{i}" for i in range(3)]),
        sh_rest=stack(rest_names),
        sh_degree=degree,
    )
    cloud.validate()
    return cloud


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write a Gaussian scene as binary little-endian PLY.

    Stored values are emitted verbatim (float32); quaternions are not
    renormalized on save. Degree-0 clouds produce files without f_rest fields.
    """
    cloud.validate()
    path = Path(path)
    n = cloud.num_gaussians
    k_rest = 3 * cloud.rest_per_channel

    field_names = (
        ["x", "y", "z"]
        + [f"f_dc_{i}" for i in range(3)]
        + [f"f_rest_{i}" for i in range(k_rest)]
        + ["opacity"]
        + [f"scale_{i}" for i in range(3)]
        + [f"rot_{i}" for i in range(4)]
    )
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in field_names]
    header.append("end_header")

    table = np.concatenate(
        [
            cloud.positions.detach().numpy(),
            cloud.sh_dc.detach().numpy(),
            cloud.sh_rest.detach().numpy().reshape(n, k_rest),
            cloud.opacity_logits.detach().numpy().reshape(n, 1),
            cloud.log_scales.detach().numpy(),
            cloud.rotations.detach().numpy(),
        ],
        axis=1,
    ).astype("<f4")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(table.tobytes())
