"""Plain-text sampled grids shared by receiver and density files.

Layout (``#`` starts a comment): line 1 ``n``; line 2 the ``n`` grid
dimensions; line 3 the ``n`` spacings; line 4 the ``n`` origin
coordinates; then the samples in row-major order.
"""

import numpy as np


def read_grid_file(path: str):
    """Return ``(origin, spacing, values)`` with ``values`` shaped by the header."""
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    if len(tokens) < 5:
        raise ValueError(f"{path}: truncated grid file")
    n = int(tokens[0][0])
    dims = [int(v) for v in tokens[1]]
    spacing = [float(v) for v in tokens[2]]
    origin = [float(v) for v in tokens[3]]
    if len(dims) != n or len(spacing) != n or len(origin) != n:
        raise ValueError(f"{path}: header does not match dimension {n}")
    values = np.array([float(v) for row in tokens[4:] for v in row])
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} samples, found {values.size}")
    return np.array(origin), np.array(spacing), values.reshape(dims)


def write_grid_file(path: str, origin, spacing, values):
    values = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{values.ndim}\n")
        fh.write(" ".join(str(d) for d in values.shape) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in np.atleast_1d(spacing)) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in np.atleast_1d(origin)) + "\n")
        for row in values.reshape(values.shape[0], -1):
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
