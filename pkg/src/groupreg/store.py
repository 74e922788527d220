"""On-disk sample store.

Layout (all integers little-endian uint64, all floats little-endian float64):

    magic   b"GROUPREGSTORE1\\n"
    u64     header length in bytes
    bytes   header: canonical JSON (sorted keys) with model id, seed,
            config hash, lattice geometry, n_subjects, n_records, lambda_r
    then n_records records, each:
    u64     payload length in bytes
    f64[]   X (V values), then per subject: H_T ((d+1)^2, row-major),
            H_Tr ((d+1)^2), beta, sigma2; then alpha, rho

The header is written after all records are known, so rewriting the same
samples yields bit-identical files. `export_csv` writes one row per record
with named columns; values use shortest-roundtrip repr so they re-parse
exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MAGIC = b"GROUPREGSTORE1\n"


@dataclass
class SampleStore:
    meta: dict
    X: np.ndarray          # (S, V)
    H_fwd: np.ndarray      # (S, N, d+1, d+1)
    H_rev: np.ndarray      # (S, N, d+1, d+1)
    beta: np.ndarray       # (S, N)
    sigma2: np.ndarray     # (S, N)
    alpha: np.ndarray      # (S,)
    rho: np.ndarray        # (S,)

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_subjects(self):
        return int(self.meta.get("n_subjects", self.beta.shape[1] if self.beta.ndim == 2 else 0))


def _header_bytes(store):
    meta = dict(store.meta)
    meta["n_records"] = int(store.n_samples)
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_store(store, path):
    n = store.n_subjects
    hdr = _header_bytes(store)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        for s in range(store.n_samples):
            parts = [np.asarray(store.X[s], dtype="<f8").ravel()]
            for i in range(n):
                parts.append(np.asarray(store.H_fwd[s, i], dtype="<f8").ravel())
                parts.append(np.asarray(store.H_rev[s, i], dtype="<f8").ravel())
                parts.append(np.array([store.beta[s, i]], dtype="<f8"))
                parts.append(np.array([store.sigma2[s, i]], dtype="<f8"))
            parts.append(np.array([store.alpha[s], store.rho[s]], dtype="<f8"))
            payload = np.concatenate(parts).tobytes()
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_store(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ValidationError(f"{path}: not a sample store (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    meta = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    n_rec = int(meta["n_records"])
    n = int(meta["n_subjects"])
    dim = int(meta["dim"])
    v = int(np.prod(meta["shape"]))
    hsz = (dim + 1) ** 2
    per_subject = 2 * hsz + 2
    expect = v + n * per_subject + 2

    x = np.empty((n_rec, v))
    h_fwd = np.empty((n_rec, n, dim + 1, dim + 1))
    h_rev = np.empty((n_rec, n, dim + 1, dim + 1))
    beta = np.empty((n_rec, n))
    sigma2 = np.empty((n_rec, n))
    alpha = np.empty(n_rec)
    rho = np.empty(n_rec)
    for s in range(n_rec):
        (plen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        vals = np.frombuffer(blob, dtype="<f8", count=plen // 8, offset=off)
        off += plen
        if vals.size != expect:
            raise ValidationError(f"{path}: record {s} has {vals.size} values, expected {expect}")
        x[s] = vals[:v]
        pos = v
        for i in range(n):
            h_fwd[s, i] = vals[pos:pos + hsz].reshape(dim + 1, dim + 1)
            pos += hsz
            h_rev[s, i] = vals[pos:pos + hsz].reshape(dim + 1, dim + 1)
            pos += hsz
            beta[s, i] = vals[pos]
            sigma2[s, i] = vals[pos + 1]
            pos += 2
        alpha[s] = vals[pos]
        rho[s] = vals[pos + 1]
    return SampleStore(meta=meta, X=x, H_fwd=h_fwd, H_rev=h_rev, beta=beta,
                       sigma2=sigma2, alpha=alpha, rho=rho)


def export_csv(store, path):
    """One row per thinned sample, shortest-roundtrip float formatting."""
    n = store.n_subjects
    v = store.X.shape[1]
    hsz = store.H_fwd.shape[-1] ** 2 if n else 0
    cols = [f"X_{l}" for l in range(v)]
    for i in range(n):
        cols.extend(f"T{i}_h{j}" for j in range(hsz))
        cols.extend(f"Tr{i}_h{j}" for j in range(hsz))
        cols.extend([f"beta_{i}", f"sigma2_{i}"])
    cols.extend(["alpha", "rho"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for s in range(store.n_samples):
            row = [repr(float(val)) for val in store.X[s]]
            for i in range(n):
                row.extend(repr(float(val)) for val in store.H_fwd[s, i].ravel())
                row.extend(repr(float(val)) for val in store.H_rev[s, i].ravel())
                row.append(repr(float(store.beta[s, i])))
                row.append(repr(float(store.sigma2[s, i])))
            row.append(repr(float(store.alpha[s])))
            row.append(repr(float(store.rho[s])))
            fh.write(",".join(row) + "\n")
