"""Train-on-A / test-on-B experiment grids, learning curves and tables.

A grid trains one model per training ensemble (a *row*) and scores it on a
held-out set from every test ensemble (the *columns*). Every seed in a grid
is derived from ``GridSpec.seed`` and the ensemble's name, so rows are
independent: dropping a training kind leaves the other rows unchanged, and
rows may run in separate processes without changing any number.

Config files are JSON::

    {"task": "eigenvalues", "n": 2,
     "train_kinds": ["gaussian", "abs_laplace"], "test_kinds": ["gaussian", "abs_laplace"],
     "input_scheme": "P1000", "target_scheme": "P1000",
     "model": {"enc_layers": 2, "dec_layers": 1, "dim": 64, "heads": 4},
     "train": {"lr_max": 0.001, "warmup_steps": 1000, "batch": 64},
     "samples_per_cell": 300000, "test_count": 500, "seed": 7}

``model`` and ``train`` hold :class:`ModelConfig` (minus vocabularies and
lengths) and :class:`TrainConfig` fields; ``tol`` optionally holds
:class:`ToleranceConfig` fields. A learning-curve config uses ``kind`` (the
training ensemble), ``eval_kind`` and ``max_samples`` instead of the kind
lists and ``samples_per_cell``.
"""
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import codec, datagen, ensembles, evalkit
from .ensembles import DISPLAY_NAMES, EnsembleConfig
from .errors import EigenlabError
from .evalkit import ToleranceConfig
from .nanoformer import Model, TrainConfig, greedy_decode, model_config_for, train

FAILED = "\u2014"  # em dash, marks a failed cell


def derive_seed(seed, *labels):
    """Stable 64-bit seed from a base seed and string labels."""
    h = hashlib.sha256(str(int(seed)).encode())
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


@dataclass(frozen=True)
class GridSpec:
    task: str
    train_kinds: tuple
    test_kinds: tuple
    n: int
    model: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    samples_per_cell: int = 100_000
    test_count: int = 500
    tol: ToleranceConfig = ToleranceConfig()
    seed: int = 0
    input_scheme: str = "P1000"
    target_scheme: str = "P1000"

    def __post_init__(self):
        object.__setattr__(self, "train_kinds", tuple(self.train_kinds))
        object.__setattr__(self, "test_kinds", tuple(self.test_kinds))
        if not self.train_kinds or not self.test_kinds:
            raise ValueError("train_kinds and test_kinds must be nonempty")
        if self.test_count < 100:
            raise ValueError("test_count must be >= 100")
        for k in self.train_kinds + self.test_kinds:
            EnsembleConfig(k, self.n)

    def model_config(self, kind):
        arch = dict(self.model)
        arch["seed"] = derive_seed(self.seed, "model", kind)
        return model_config_for(self.input_scheme, self.target_scheme, self.n, self.task, **arch)

    def train_data(self, kind, count):
        ens = EnsembleConfig(kind, self.n, seed=derive_seed(self.seed, "train", kind))
        return datagen.DatasetSpec(self.task, ens, self.input_scheme, self.target_scheme, count=count)

    def test_data(self, kind):
        ens = EnsembleConfig(kind, self.n, seed=derive_seed(self.seed, "test", kind))
        return datagen.DatasetSpec(self.task, ens, self.input_scheme, self.target_scheme,
                                   count=self.test_count)

    def to_dict(self):
        return {
            "task": self.task, "n": self.n,
            "train_kinds": list(self.train_kinds), "test_kinds": list(self.test_kinds),
            "input_scheme": self.input_scheme, "target_scheme": self.target_scheme,
            "model": dict(self.model), "train": self.train.to_dict(),
            "samples_per_cell": self.samples_per_cell, "test_count": self.test_count,
            "tol": self.tol.to_dict(), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        d["tol"] = ToleranceConfig.from_dict(d.get("tol", {}))
        return cls(**d)


@dataclass
class Table:
    title: str
    row_labels: list
    col_labels: list
    values: list
    """Row-major cells; ``None`` marks a failed cell."""
    corner: str = ""
    md_format: str = "{:.0f}"


@dataclass
class GridReport:
    spec: GridSpec
    accuracy: list
    """``accuracy[i][j]``: percent of test set ``j`` solved by the model
    trained on kind ``i``; ``None`` for a failed row."""
    cells: dict = field(default_factory=dict)
    """``(train_kind, test_kind) -> VerifierReport``."""
    errors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict, compare=False)

    def table(self):
        s = self.spec
        return Table(
            title=f"{s.task}, {s.n}x{s.n}: accuracy (%) at tau={s.tol.tau:g}",
            row_labels=[DISPLAY_NAMES[k] for k in s.train_kinds],
            col_labels=[DISPLAY_NAMES[k] for k in s.test_kinds],
            values=self.accuracy, corner="train \\ test")

    def cell(self, train_kind, test_kind):
        return self.accuracy[self.spec.train_kinds.index(train_kind)][self.spec.test_kinds.index(test_kind)]


# -- evaluation --------------------------------------------------------------

def load_test_set(dspec):
    """``(src_ids, tgt_ids, matrices)`` for a held-out set."""
    src, tgt = datagen.id_batch(dspec, 0, dspec.count)
    sch = codec.get_scheme(dspec.input_scheme)
    mats = np.stack([codec.decode_input(row, sch.name) for row in src])
    return src, tgt, mats


def evaluate_model(model, task, src, mats, scheme, tol=evalkit.DEFAULT_TOL, chunk=500):
    """Greedy-decode every source and score it; returns EvalRecords."""
    max_len = model.cfg.max_tgt_len
    records = []
    for s in range(0, len(src), chunk):
        outs = greedy_decode(model, src[s:s + chunk], max_len)
        for out, m in zip(outs, mats[s:s + chunk]):
            records.append(evalkit.score_tokens(task, m, out, scheme, tol))
    return records


def accuracy_of(records):
    return float(np.mean([r.success for r in records]))


def _train_model(spec, kind, samples, eval_fn=None, stop_fn=None, train_cfg=None):
    tcfg = train_cfg or spec.train
    steps = max(1, samples // tcfg.batch)
    tcfg = replace(tcfg, max_steps=steps)
    data = spec.train_data(kind, steps * tcfg.batch)
    model = Model(spec.model_config(kind))
    b = tcfg.batch

    def batch_fn(step):
        return datagen.id_batch(data, step * b, (step + 1) * b)

    rows = train(model, tcfg, batch_fn, eval_fn=eval_fn, stop_fn=stop_fn)
    return model, rows


def _run_row(spec, kind):
    t0 = time.time()
    tests = {k: load_test_set(spec.test_data(k)) for k in spec.test_kinds}
    try:
        model, rows = _train_model(spec, kind, spec.samples_per_cell)
    except EigenlabError as exc:
        return None, {}, f"{type(exc).__name__}: {exc}", {"seconds": time.time() - t0}
    accs, reports = [], {}
    for k in spec.test_kinds:
        src, _, mats = tests[k]
        recs = evaluate_model(model, spec.task, src, mats, spec.target_scheme, spec.tol)
        accs.append(100.0 * accuracy_of(recs))
        reports[k] = evalkit.verifier_report(recs, spec.tol)
    meta = {"seconds": time.time() - t0, "steps": len(rows), "final_loss": rows[-1][2]}
    return accs, reports, None, meta


def run_grid(spec, workers=1):
    """Fill the accuracy matrix; a row whose training fails is recorded in
    ``errors`` and left as ``None`` while the grid continues."""
    if workers > 1 and len(spec.train_kinds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_row, spec, k) for k in spec.train_kinds]
            results = [f.result() for f in futures]
    else:
        results = [_run_row(spec, k) for k in spec.train_kinds]
    report = GridReport(spec, [], {}, {}, {"workers": workers, "rows": {}})
    for kind, (accs, reports, err, meta) in zip(spec.train_kinds, results):
        if accs is None:
            report.accuracy.append([None] * len(spec.test_kinds))
            report.errors[kind] = err
        else:
            report.accuracy.append(accs)
            for k, rep in reports.items():
                report.cells[(kind, k)] = rep
        report.meta["rows"][kind] = meta
    return report


def grid_manifest(report):
    """Everything needed to replay a grid: spec, derived seeds, test-set
    hashes and the digest of the CSV table."""
    s = report.spec
    tests = {}
    for k in s.test_kinds:
        src, tgt = datagen.id_batch(s.test_data(k), 0, s.test_count)
        tests[k] = {"seed": s.test_data(k).seed,
                    "sha256": hashlib.sha256(src.tobytes() + tgt.tobytes()).hexdigest()}
    return {
        "spec": s.to_dict(),
        "train_seeds": {k: s.train_data(k, 1).seed for k in s.train_kinds},
        "model_seeds": {k: s.model_config(k).seed for k in s.train_kinds},
        "test_sets": tests,
        "errors": report.errors,
        "table_sha256": hashlib.sha256(emit_table(report, "csv").encode()).hexdigest(),
    }


# -- learning curves ---------------------------------------------------------

@dataclass
class CurveResult:
    reached: bool
    samples: Optional[int]
    """Training examples consumed when the target was first met."""
    final_accuracy: float
    budget: int
    history: list = field(default_factory=list)
    """``(samples, accuracy)`` at each evaluation."""
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self):
        return asdict(self)


def learning_curve(task, kind, model, train_cfg, target_accuracy, eval_kind, n,
                   max_samples, test_count=500, seed=0, input_scheme="P1000",
                   target_scheme="P1000", tol=evalkit.DEFAULT_TOL, max_seconds=None):
    """Train on ``kind`` and evaluate on ``eval_kind`` every
    ``train_cfg.eval_every`` steps until accuracy reaches ``target_accuracy``
    (a fraction), ``max_samples`` examples have been used, or (optionally)
    ``max_seconds`` of wall time have passed."""
    if train_cfg.eval_every < 1:
        raise ValueError("learning_curve needs train.eval_every >= 1")
    spec = GridSpec(task, (kind,), (eval_kind,), n, model=model, train=train_cfg,
                    samples_per_cell=max_samples, test_count=test_count, tol=tol, seed=seed,
                    input_scheme=input_scheme, target_scheme=target_scheme)
    src, _, mats = load_test_set(spec.test_data(eval_kind))
    history = []
    t0 = time.time()

    def eval_fn(m):
        return accuracy_of(evaluate_model(m, task, src, mats, target_scheme, tol))

    def stop_fn(step, acc):
        history.append(((step + 1) * train_cfg.batch, acc))
        if max_seconds is not None and time.time() - t0 > max_seconds:
            return True
        return acc >= target_accuracy

    _train_model(spec, kind, max_samples, eval_fn=eval_fn, stop_fn=stop_fn)
    final = history[-1][1] if history else 0.0
    hit = [s for s, a in history if a >= target_accuracy]
    return CurveResult(bool(hit), hit[0] if hit else None, final,
                       (max_samples // train_cfg.batch) * train_cfg.batch, history,
                       time.time() - t0)


# -- condition-number tables -------------------------------------------------

def condition_table(kinds=ensembles.OOD_KINDS, n=5, count=10_000, seed=0, workers=1):
    """Median, third quartile and 90th percentile of ``cond(M)`` per kind."""
    values = []
    for k in kinds:
        q = ensembles.condition_stats(EnsembleConfig(k, n, seed=seed), count, workers)
        values.append([q.median, q.q3, q.p90])
    return Table(title=f"Condition numbers of {count} random {n}x{n} matrices",
                 row_labels=[DISPLAY_NAMES[k] for k in kinds],
                 col_labels=["Median", "Third quartile", "90th percentile"],
                 values=values, corner="ensemble", md_format="{:.1f}")


# -- emission ----------------------------------------------------------------

def emit_table(report, fmt="markdown"):
    """Serialize a :class:`Table` (or anything with ``.table()``) as ``csv``
    or ``markdown``. Markdown cells use the table's display format; CSV keeps
    full precision. Failed cells are written as ``FAILED`` in both."""
    table = report.table() if hasattr(report, "table") else report
    if fmt == "csv":
        lines = [",".join(_csv_cell(c) for c in [table.corner] + list(table.col_labels))]
        for label, row in zip(table.row_labels, table.values):
            lines.append(",".join([_csv_cell(label)] + [FAILED if v is None else repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        head = "| " + " | ".join([table.corner] + list(table.col_labels)) + " |"
        rule = "|" + "|".join(["---"] + [":---:"] * len(table.col_labels)) + "|"
        lines = [head, rule]
        for label, row in zip(table.row_labels, table.values):
            cells = [FAILED if v is None else table.md_format.format(v) for v in row]
            lines.append("| " + " | ".join([label] + cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def _csv_cell(s):
    s = str(s)
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def parse_markdown(text):
    """Inverse of ``emit_table(..., "markdown")`` up to display rounding."""
    lines = [ln for ln in text.strip().splitlines() if ln.startswith("|")]
    split = [[c.strip() for c in ln.strip().strip("|").split("|")] for ln in lines]
    head, body = split[0], split[2:]
    values = [[None if c == FAILED else float(c) for c in row[1:]] for row in body]
    return Table(title="", row_labels=[r[0] for r in body], col_labels=head[1:],
                 values=values, corner=head[0])


def write_report(report, path):
    """Write the table to ``path`` (markdown when it ends in ``.md``, else
    CSV) and the run manifest to ``path + '.manifest.json'``."""
    fmt = "markdown" if str(path).endswith(".md") else "csv"
    with open(path, "w", encoding="utf-8") as f:
        f.write(emit_table(report, fmt))
    manifest = grid_manifest(report) if isinstance(report, GridReport) else {}
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
