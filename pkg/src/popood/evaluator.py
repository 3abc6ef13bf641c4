"""Test stage: OOD scores, the threshold rule and FPR95 / AUROC.

All scores are oriented so that larger means "more in-distribution".
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import rankdata

from .errors import FormatError, InsufficientDataError, InvalidArgumentError
from .netcore import ForwardRecord

SCORE_KINDS = ("pop", "msp", "energy", "maxlogit")


@dataclass(frozen=True)
class ScoredSample:
    score: float
    is_id: bool
    score_kind: str = "pop"


@dataclass(frozen=True)
class MetricReport:
    fpr95: float
    auroc: float
    threshold_lambda: float
    num_id: int
    num_ood: int

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


def pop_score(record: ForwardRecord, num_id: int | None = None):
    """Feature norm times the max cosine logit.

    The max runs over every head logit (ID prototypes and outlier proxies);
    pass ``num_id`` to restrict it to the ID logits.
    """
    z = np.asarray(record.logits)
    if num_id is not None:
        z = z[..., :num_id]
    return record.feature_norm * z.max(axis=-1)


def baseline_score(record: ForwardRecord, kind: str, temperature: float = 1.0):
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    z = np.asarray(record.logits, dtype=np.float64)
    if kind == "msp":
        return softmax(z / temperature, axis=-1).max(axis=-1)
    if kind == "energy":
        return temperature * logsumexp(z / temperature, axis=-1)
    if kind == "maxlogit":
        return z.max(axis=-1)
    raise InvalidArgumentError(f"unknown baseline score {kind!r}")


def compute_score(record: ForwardRecord, kind: str, temperature: float = 1.0, num_id: int | None = None):
    if kind == "pop":
        return pop_score(record, num_id)
    return baseline_score(record, kind, temperature)


def decide(score, lam):
    """``True`` (ID) iff ``score >= lam``; vectorizes over arrays."""
    return np.asarray(score) >= lam


def fpr_at_95_tpr(id_scores, ood_scores) -> tuple[float, float]:
    """Return ``(fpr, lambda)`` with ``lambda`` the largest threshold keeping ID TPR >= 0.95."""
    ids = np.sort(np.asarray(id_scores, dtype=np.float64))
    ood = np.asarray(ood_scores, dtype=np.float64)
    n = ids.size
    # count of ID scores >= ids[k]; first occurrence handles ties
    at_or_above = n - np.searchsorted(ids, ids, side="left")
    ok = 20 * at_or_above >= 19 * n  # integer form of TPR >= 0.95
    lam = float(ids[np.flatnonzero(ok)[-1]])
    return float(np.mean(ood >= lam)), lam


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney AUROC: P(id > ood) + 0.5 * P(id == ood)."""
    ids = np.asarray(id_scores, dtype=np.float64)
    ood = np.asarray(ood_scores, dtype=np.float64)
    ranks = rankdata(np.concatenate([ids, ood]))  # average ranks resolve ties as halves
    n1, n0 = ids.size, ood.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def metrics_from_scores(id_scores, ood_scores) -> MetricReport:
    ids = np.asarray(id_scores, dtype=np.float64).ravel()
    ood = np.asarray(ood_scores, dtype=np.float64).ravel()
    if ids.size == 0 or ood.size == 0:
        raise InsufficientDataError(f"need at least one ID and one OOD sample (got {ids.size} ID, {ood.size} OOD)")
    fpr, lam = fpr_at_95_tpr(ids, ood)
    return MetricReport(fpr, auroc(ids, ood), lam, int(ids.size), int(ood.size))


def compute_metrics(samples: Sequence[ScoredSample]) -> MetricReport:
    ids = [s.score for s in samples if s.is_id]
    ood = [s.score for s in samples if not s.is_id]
    return metrics_from_scores(ids, ood)


def write_score_dump(path, rows: Iterable[tuple[int, bool, str, float]]) -> None:
    lines = ["sample_id,is_id,score_kind,score"]
    lines += [f"{sid},{int(bool(is_id))},{kind},{float(s):.17g}" for sid, is_id, kind, s in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_score_dump(path) -> list[tuple[int, bool, str, float]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, f"cannot read score dump: {exc.strerror}") from exc
    if not lines or lines[0].strip() != "sample_id,is_id,score_kind,score":
        raise FormatError(path, "missing score dump header", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            sid, is_id, kind, s = line.split(",")
            rows.append((int(sid), bool(int(is_id)), kind, float(s)))
        except ValueError:
            raise FormatError(path, f"malformed row {line!r}", lineno) from None
    return rows


def write_reports(out_dir, reports: dict[str, MetricReport]) -> None:
    """``metrics.txt`` (key=value, one block per score kind) and ``metrics.json``."""
    out_dir = Path(out_dir)
    text = []
    for kind, rep in reports.items():
        text += [f"[{kind}]", rep.to_text()]
    (out_dir / "metrics.txt").write_text("\n".join(text))
    (out_dir / "metrics.json").write_text(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2, sort_keys=True) + "\n")
