"""Reproducible datasets of (problem, solution) token sequences.

On disk a dataset is a directory holding

``data.txt``
    UTF-8, one record per line: input token surfaces separated by single
    spaces, then `` | ``, then the target surfaces, then ``\\n``.
``manifest.json``
    ``{version, task, ensemble{kind, n, sigma, seed, spectrum_scale},
    input_scheme, target_scheme, count, sha256, retries}`` where ``sha256`` is
    the digest of ``data.txt``.

Record ``i`` is a pure function of ``(spec, i)``. A draw that cannot be solved
(singular matrix, Jacobi failure) or encoded (overflow) is discarded and
regenerated from retry stream ``attempt + 1`` of the same index, at most
``MAX_RETRIES`` times.
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import codec, ensembles, linalg
from .ensembles import EnsembleConfig
from .errors import (DatasetFormatError, DecodeError, EncodeRangeError,
                     GenerationError, SingularMatrixError, SolverError)

FORMAT_VERSION = 1
MAX_RETRIES = 100
DATA_FILE = "data.txt"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class DatasetSpec:
    task: str
    ensemble: EnsembleConfig
    input_scheme: str = "P1000"
    target_scheme: str = "P1000"
    count: int = 1
    seed: Optional[int] = None
    """Sampling seed. When given it overrides ``ensemble.seed``."""

    def __post_init__(self):
        codec.target_values(self.task, 2)
        if self.seed is not None and self.seed != self.ensemble.seed:
            object.__setattr__(self, "ensemble", replace(self.ensemble, seed=int(self.seed)))
        object.__setattr__(self, "seed", self.ensemble.seed)
        object.__setattr__(self, "input_scheme", codec.get_scheme(self.input_scheme).name)
        object.__setattr__(self, "target_scheme", codec.get_scheme(self.target_scheme).name)
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.task != "inversion" and not self.ensemble.symmetric:
            raise ValueError(f"task {self.task!r} needs a symmetric ensemble, not {self.ensemble.kind!r}")

    @property
    def n(self):
        return self.ensemble.n

    def manifest_fields(self):
        return {
            "version": FORMAT_VERSION,
            "task": self.task,
            "ensemble": self.ensemble.to_dict(),
            "input_scheme": self.input_scheme,
            "target_scheme": self.target_scheme,
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d):
        ens = d["ensemble"]
        if not isinstance(ens, EnsembleConfig):
            ens = EnsembleConfig.from_dict(ens)
        return cls(task=d["task"], ensemble=ens, input_scheme=d.get("input_scheme", "P1000"),
                   target_scheme=d.get("target_scheme", "P1000"), count=int(d.get("count", 1)),
                   seed=d.get("seed"))


@dataclass(frozen=True)
class DatasetRecord:
    index: int
    input: codec.TokenSequence
    target: codec.TokenSequence
    aux: dict = field(default_factory=dict, compare=False)
    retries: int = field(default=0, compare=False)

    def line(self):
        return f"{self.input} | {self.target}\n"


def compute_aux(m):
    """``cond_M`` and (for symmetric ``m``) ``min_eig`` of a decoded input."""
    aux = {"cond_M": linalg.cond(m)}
    if np.array_equal(m, m.T):
        aux["min_eig"] = float(linalg.eig_sym(m).values[-1])
    else:
        aux["min_eig"] = float("nan")
    return aux


def solve(task, m):
    """Exact solution of one problem, as the codec expects it."""
    if task == "eigenvalues":
        return linalg.eig_sym(m).values
    if task == "diagonalization":
        return tuple(linalg.eig_sym(m))
    return linalg.invert(m)


def _solve_batch(task, mats):
    """Solutions for a stack; returns (solutions, ok-mask)."""
    if task == "inversion":
        inv, ok = linalg.invert_batch(mats, strict=False)
        return inv, ok
    try:
        values, vecs = linalg.eig_sym_batch(mats)
    except SolverError:
        return None, np.zeros(len(mats), dtype=bool)
    if task == "eigenvalues":
        return values, np.ones(len(mats), dtype=bool)
    return list(zip(values, vecs)), np.ones(len(mats), dtype=bool)


def _encode_pair(spec, m, solution):
    src = codec.encode_input(m, spec.input_scheme)
    tgt = codec.encode_target(spec.task, solution, spec.target_scheme)
    return src, tgt


def example_for_index(spec, i, with_aux=True):
    """The ``i``-th record of a dataset (deterministic)."""
    if not 0 <= i < spec.count:
        raise IndexError(f"index {i} outside dataset of {spec.count}")
    for attempt in range(MAX_RETRIES + 1):
        m = ensembles.sample_matrix(spec.ensemble, i, attempt)
        try:
            src, tgt = _encode_pair(spec, m, solve(spec.task, m))
        except (SingularMatrixError, SolverError, EncodeRangeError):
            continue
        aux = compute_aux(decode_input(src)) if with_aux else {}
        return DatasetRecord(i, src, tgt, aux, attempt)
    raise GenerationError(f"index {i}: no usable draw after {MAX_RETRIES} retries")


def decode_input(seq):
    return codec.decode_input(seq, seq.scheme)


def generate_records(spec, start, stop, with_aux=False):
    """Records ``start .. stop-1``; batched equivalent of
    :func:`example_for_index` (same records, bit for bit)."""
    idx = list(range(start, min(stop, spec.count)))
    if not idx:
        return []
    mats = ensembles.sample_batch(spec.ensemble, idx)
    sols, ok = _solve_batch(spec.task, mats)
    out = []
    for k, i in enumerate(idx):
        rec = None
        if ok[k]:
            sol = sols[k]
            try:
                src, tgt = _encode_pair(spec, mats[k], sol)
                aux = compute_aux(decode_input(src)) if with_aux else {}
                rec = DatasetRecord(i, src, tgt, aux, 0)
            except EncodeRangeError:
                rec = None
        if rec is None:
            rec = example_for_index(spec, i, with_aux=with_aux)
        out.append(rec)
    return out


def id_batch(spec, start, stop):
    """Token-id arrays for records ``start .. stop-1`` (training fast path).

    Returns ``(src, tgt)`` int arrays of shape ``(B, L)``; all records of one
    spec have the same lengths.
    """
    idx = list(range(start, min(stop, spec.count)))
    mats = ensembles.sample_batch(spec.ensemble, idx)
    sols, ok = _solve_batch(spec.task, mats)
    if ok.all():
        if spec.task == "diagonalization":
            flat = np.array([np.concatenate([v, h.ravel()]) for v, h in sols])
        else:
            flat = np.asarray(sols).reshape(len(idx), -1)
        in_s = codec.get_scheme(spec.input_scheme)
        out_s = codec.get_scheme(spec.target_scheme)
        try:
            src = in_s.value_ids(mats).reshape(len(idx), -1)
            tgt = out_s.value_ids(flat).reshape(len(idx), -1)
        except EncodeRangeError:
            pass
        else:
            dim = np.full((len(idx), 1), in_s.dim_id(spec.n), dtype=np.int64)
            return np.concatenate([dim, src], axis=1), tgt
    recs = generate_records(spec, start, stop)
    src = np.array([r.input.ids for r in recs], dtype=np.int64)
    tgt = np.array([r.target.ids for r in recs], dtype=np.int64)
    return src, tgt


# -- files ------------------------------------------------------------------

def _shard_lines(spec, start, stop, chunk=512):
    lines, retries = [], 0
    for s in range(start, stop, chunk):
        for rec in generate_records(spec, s, min(stop, s + chunk)):
            lines.append(rec.line())
            retries += rec.retries
    return "".join(lines), retries


def _shards(count, workers):
    size = max(1, -(-count // max(1, workers * 4)))
    return [(s, min(count, s + size)) for s in range(0, count, size)]


def build_dataset(spec, path, workers=1):
    """Write ``data.txt`` and ``manifest.json`` under directory ``path``.

    Resumable: complete lines already present in ``data.txt`` are kept and
    generation continues after them. Output is identical for any ``workers``.
    """
    os.makedirs(path, exist_ok=True)
    data_path = os.path.join(path, DATA_FILE)
    done = _complete_prefix(data_path)
    shards = [(s, e) for s, e in _shards(spec.count, workers) if e > done]
    shards = [(max(s, done), e) for s, e in shards]
    retries = 0
    mode = "a" if done else "w"
    with open(data_path, mode, encoding="utf-8", newline="\n") as f:
        if workers > 1 and len(shards) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_shard_lines, spec, s, e) for s, e in shards]
                for fut in futures:
                    text, r = fut.result()
                    f.write(text)
                    retries += r
        else:
            for s, e in shards:
                text, r = _shard_lines(spec, s, e)
                f.write(text)
                retries += r
    manifest = spec.manifest_fields()
    manifest["sha256"] = file_sha256(data_path)
    manifest["retries"] = retries
    with open(os.path.join(path, MANIFEST_FILE), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _complete_prefix(data_path):
    """Number of newline-terminated lines; truncates a partial last line."""
    if not os.path.exists(data_path):
        return 0
    with open(data_path, "rb") as f:
        raw = f.read()
    keep = raw.rfind(b"\n") + 1
    if keep != len(raw):
        with open(data_path, "wb") as f:
            f.write(raw[:keep])
    return raw[:keep].count(b"\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_manifest(path):
    with open(os.path.join(path, MANIFEST_FILE), encoding="utf-8") as f:
        return json.load(f)


def parse_line(line, input_scheme, target_scheme, n=None, task=None, lineno=0):
    """Split and validate one data line; returns ``(input, target)``."""
    if not line.endswith("\n"):
        raise DatasetFormatError(lineno, "truncated line (no terminator)")
    body = line[:-1]
    parts = body.split(" | ")
    if len(parts) != 2:
        raise DatasetFormatError(lineno, "expected exactly one ' | ' separator")
    try:
        src = codec.TokenSequence.from_surfaces(parts[0].split(" "), input_scheme)
        tgt = codec.TokenSequence.from_surfaces(parts[1].split(" "), target_scheme)
        m = codec.decode_input(src, input_scheme)
        if n is not None and m.shape[0] != n:
            raise DatasetFormatError(lineno, f"matrix size {m.shape[0]} differs from manifest n={n}")
        if task is not None:
            codec.decode_target(task, tgt, m.shape[0], target_scheme)
    except DecodeError as exc:
        raise DatasetFormatError(lineno, f"bad token sequence ({exc})") from exc
    return src, tgt


def read_dataset(path, with_aux=False):
    """Yield the records of a dataset directory in file order.

    Raises :class:`DatasetFormatError` (with a 1-based line number) at the
    first malformed line, after yielding every record before it.
    """
    manifest = read_manifest(path)
    try:
        task = manifest["task"]
        n = int(manifest["ensemble"]["n"])
        in_s = codec.get_scheme(manifest["input_scheme"]).name
        out_s = codec.get_scheme(manifest["target_scheme"]).name
        count = int(manifest["count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(0, f"bad manifest: {exc}") from exc
    seen = 0
    with open(os.path.join(path, DATA_FILE), encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            src, tgt = parse_line(line, in_s, out_s, n, task, lineno)
            aux = compute_aux(codec.decode_input(src, in_s)) if with_aux else {}
            yield DatasetRecord(lineno - 1, src, tgt, aux)
            seen += 1
    if seen != count:
        raise DatasetFormatError(seen + 1, f"manifest promises {count} records, file has {seen}")


def verify_hash(path):
    """True when ``data.txt`` matches the manifest digest."""
    return read_manifest(path).get("sha256") == file_sha256(os.path.join(path, DATA_FILE))


def spec_from_manifest(path):
    m = read_manifest(path)
    return DatasetSpec.from_dict(m)

