"""Model file format: self-describing, line-oriented, bit-exact.

Layout::

    nncore-model 1
    kind <model-kind-tag>
    meta <key> <value>          # zero or more
    tensor <name> <d0> [<d1> ...]
    <one line of values per row, row-major, repr()-formatted>
    ...
    end

repr() of a Python float is the shortest decimal string that round-trips,
so save/load reproduces every tensor bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ParseError

FORMAT_VERSION = 1


def save_model(path, kind: str, params: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"nncore-model {FORMAT_VERSION}", f"kind {kind}"]
    for key, value in (meta or {}).items():
        if " " in str(key):
            raise ValueError(f"meta key may not contain spaces: {key!r}")
        value = repr(float(value)) if isinstance(value, float) else str(value)
        lines.append(f"meta {key} {value}")
    for name, tensor in params.items():
        tensor = np.asarray(tensor, dtype=np.float64)
        dims = " ".join(str(d) for d in tensor.shape) or "1"
        lines.append(f"tensor {name} {dims}")
        rows = tensor.reshape(-1, tensor.shape[-1]) if tensor.ndim > 1 else tensor.reshape(1, -1)
        for row in rows:
            lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("end")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_model(path):
    """Returns (kind, params, meta); meta values are raw strings."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("nncore-model "):
        raise ParseError(path, 1, "not a model file")
    version = lines[0].split()[1]
    if int(version) != FORMAT_VERSION:
        raise ParseError(path, 1, f"unsupported format version {version}")
    kind = None
    meta: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            break
        if line.startswith("kind "):
            kind = line[5:].strip()
            i += 1
        elif line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
        elif line.startswith("tensor "):
            parts = line.split()
            name = parts[1]
            shape = tuple(int(d) for d in parts[2:])
            n_rows = 1 if len(shape) == 1 else int(np.prod(shape[:-1]))
            values = []
            for r in range(n_rows):
                i += 1
                if i >= len(lines):
                    raise ParseError(path, i + 1, f"tensor {name}: truncated")
                try:
                    values.append([float(tok) for tok in lines[i].split()])
                except ValueError:
                    raise ParseError(path, i + 1, f"tensor {name}: bad value") from None
            arr = np.asarray(values, dtype=np.float64)
            if arr.size != int(np.prod(shape)):
                raise ParseError(path, i + 1, f"tensor {name}: expected {shape}, got {arr.size} values")
            params[name] = arr.reshape(shape)
            i += 1
        else:
            raise ParseError(path, i + 1, f"unexpected line: {line[:40]!r}")
    if kind is None:
        raise ParseError(path, 1, "missing kind line")
    return kind, params, meta
