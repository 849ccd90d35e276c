"""
Instance files.

Layout::

    %ASYFLEXA-INSTANCE 1
    key = value            (one per line; meta.* values are JSON)
    %END-HEADER
    <matrix block>         dense: m*n little-endian float64, row-major
                           mm:    Matrix Market coordinate text, matrix_bytes long
    <b>                    m little-endian float64
    <optional vectors>     n little-endian float64 each, in the order of `vectors`
"""

from __future__ import annotations

import io
import json

import numpy as np
import scipy.io
import scipy.sparse as sp

from .generators import GeneratedInstance
from .model import CompositeProblem, Family, LossMode, QuadraticLoss, Regularizer

MAGIC = "%ASYFLEXA-INSTANCE 1"
END = "%END-HEADER"
_LE = np.dtype("<f8")


def save_instance(path, instance, matrix_format: str | None = None) -> None:
    """Write a :class:`GeneratedInstance` (or a bare problem) to ``path``."""
    if isinstance(instance, CompositeProblem):
        instance = GeneratedInstance(instance, meta=dict(instance.meta))
    problem = instance.problem
    loss, reg = problem.loss, problem.reg
    A = loss.A
    if matrix_format is None:
        matrix_format = "mm" if sp.issparse(A) else "dense"
    if matrix_format == "dense":
        block = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=_LE).tobytes(order="C")
    elif matrix_format == "mm":
        buf = io.BytesIO()
        scipy.io.mmwrite(buf, sp.coo_matrix(A), precision=17)
        block = buf.getvalue()
    else:
        raise ValueError(f"unknown matrix format {matrix_format!r}")
    vectors = [name for name in ("xbar", "xstar") if getattr(instance, name) is not None]
    meta = {**problem.meta, **instance.meta}
    header = {
        "m": problem.m,
        "n": problem.n,
        "lambda": repr(float(reg.lam)),
        "family": reg.family.name,
        "theta": repr(float(reg.theta)),
        "scale": repr(float(loss.scale)),
        "generator": meta.get("generator", "unknown"),
        "seed": meta.get("seed", ""),
        "fstar": "" if problem.fstar is None else repr(float(problem.fstar)),
        "matrix_format": matrix_format,
        "matrix_bytes": len(block),
        "vectors": ",".join(vectors),
    }
    lines = [MAGIC]
    lines += [f"{k} = {v}" for k, v in header.items()]
    lines += [f"meta.{k} = {json.dumps(_jsonable(v))}" for k, v in sorted(meta.items())]
    lines.append(END)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(block)
        fh.write(np.asarray(loss.b, dtype=_LE).tobytes())
        for name in vectors:
            fh.write(np.asarray(getattr(instance, name), dtype=_LE).tobytes())


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def load_instance(path, mode: LossMode | None = None) -> GeneratedInstance:
    with open(path, "rb") as fh:
        first = fh.readline().decode().rstrip("\n")
        if first != MAGIC:
            raise ValueError(f"{path}: not an instance file")
        header, meta = {}, {}
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.decode().rstrip("\n")
            if line == END:
                break
            key, val = (s.strip() for s in line.split("=", 1))
            if key.startswith("meta."):
                meta[key[5:]] = json.loads(val)
            else:
                header[key] = val
        m, n = int(header["m"]), int(header["n"])
        block = fh.read(int(header["matrix_bytes"]))
        if header["matrix_format"] == "dense":
            A = np.frombuffer(block, dtype=_LE).reshape(m, n).astype(np.float64)
        else:
            A = sp.csc_matrix(scipy.io.mmread(io.BytesIO(block)))
        b = np.frombuffer(fh.read(8 * m), dtype=_LE).astype(np.float64)
        vecs = {}
        for name in filter(None, header["vectors"].split(",")):
            vecs[name] = np.frombuffer(fh.read(8 * n), dtype=_LE).astype(np.float64)
    fam = Family.parse(header["family"])
    reg = Regularizer(fam, float(header["lambda"]), float(header["theta"]))
    fstar = float(header["fstar"]) if header.get("fstar") else None
    problem = CompositeProblem(QuadraticLoss(A, b, float(header["scale"]), mode), reg,
                               fstar=fstar, meta=meta)
    return GeneratedInstance(problem, xbar=vecs.get("xbar"), xstar=vecs.get("xstar"), meta=meta)
