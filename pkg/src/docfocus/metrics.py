"""Answer-quality metrics: normalized edit similarity, relaxed accuracy,
exact match, and density-stratified aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyEval


@dataclass(frozen=True)
class PredictionRecord:
    page_id: str
    question: str
    prediction: str
    gold: tuple[str, ...]
    word_count: int

    def __post_init__(self):
        if not self.gold:
            raise EmptyEval("gold answer list must be non-empty")


@dataclass
class EvalReport:
    metric: str
    score: float
    n: int
    groups: dict[int, tuple[float, int]] = field(default_factory=dict)  # t -> (score, n)

    def as_table(self) -> str:
        rows = [("group", "n", self.metric)]
        rows.append(("all", str(self.n), f"{self.score:.4f}"))
        for t in sorted(self.groups):
            s, n = self.groups[t]
            rows.append((f">={t}", str(n), f"{s:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
            for row in rows
        )

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "score": self.score,
            "n": self.n,
            "groups": {str(t): {"score": s, "n": n} for t, (s, n) in self.groups.items()},
        }


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fold(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return " ".join(text.lower().split())


def _anls_single(prediction: str, gold: tuple[str, ...], threshold: float) -> float:
    pred = fold(prediction)
    best = 0.0
    for g in gold:
        g = fold(g)
        length = max(len(pred), len(g))
        nl = 0.0 if length == 0 else levenshtein(pred, g) / length
        score = 1.0 - nl if nl < threshold else 0.0
        best = max(best, score)
    return best


def anls(records: list[PredictionRecord], threshold: float = 0.5) -> float:
    """Mean thresholded normalized edit similarity against the best gold."""
    if not records:
        raise EmptyEval("no records to evaluate")
    return sum(_anls_single(r.prediction, r.gold, threshold) for r in records) / len(records)


def _parse_number(text: str) -> float | None:
    try:
        return float(text.strip().rstrip("%"))
    except ValueError:
        return None


def _relaxed_single(prediction: str, gold: tuple[str, ...], tolerance: float) -> float:
    for g in gold:
        g_num = _parse_number(g)
        if g_num is not None:
            p_num = _parse_number(prediction)
            if p_num is None:
                continue
            if g_num == 0.0:
                if p_num == 0.0:
                    return 1.0
            elif abs(p_num - g_num) <= tolerance * abs(g_num):
                return 1.0
        elif fold(prediction) == fold(g):
            return 1.0
    return 0.0


def relaxed_accuracy(records: list[PredictionRecord], tolerance: float = 0.05) -> float:
    """Exact match for strings, tolerance-band match for numeric answers."""
    if not records:
        raise EmptyEval("no records to evaluate")
    return sum(_relaxed_single(r.prediction, r.gold, tolerance) for r in records) / len(records)


def exact_match(records: list[PredictionRecord]) -> float:
    if not records:
        raise EmptyEval("no records to evaluate")
    hits = sum(
        1.0 if any(fold(r.prediction) == fold(g) for g in r.gold) else 0.0
        for r in records
    )
    return hits / len(records)


METRICS = {"anls": anls, "ra": relaxed_accuracy, "em": exact_match}


def density_eval(
    records: list[PredictionRecord],
    thresholds: list[int],
    metric: str = "em",
) -> EvalReport:
    """Metric over overlapping groups of records with word_count >= t."""
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    if not records:
        raise EmptyEval("no records to evaluate")
    fn = METRICS[metric]
    report = EvalReport(metric=metric, score=fn(records), n=len(records))
    for t in thresholds:
        group = [r for r in records if r.word_count >= t]
        if group:
            report.groups[t] = (fn(group), len(group))
    return report


def relaxed_kv_eval(pages, predict_fn, threshold: float = 0.5) -> EvalReport:
    """Zero-shot key-value extraction scored with ANLS.

    For every rendered "key: value" row, the model is prompted with
    "what is the value of <key>?" and scored against the value string.
    Pages without key rows contribute nothing.
    """
    from .synth import kv_pairs

    records = []
    for page in pages:
        for key, value, _box in kv_pairs(page):
            prediction = predict_fn(page, f"what is the value of {key}?")
            records.append(
                PredictionRecord(
                    page_id=page.page_id,
                    question=f"what is the value of {key}?",
                    prediction=prediction,
                    gold=(value,),
                    word_count=page.word_count,
                )
            )
    if not records:
        return EvalReport(metric="anls", score=0.0, n=0)
    return EvalReport(metric="anls", score=anls(records, threshold), n=len(records))
