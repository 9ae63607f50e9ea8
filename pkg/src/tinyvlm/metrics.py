"""Deterministic caption/QA scoring rubrics.

Five generative scores on a 0-5 scale (word correctness, detail
orientation, contextual understanding, temporal understanding,
consistency), their mean, and per-dataset QA accuracy. Similarity is
lexical: content-word multiset overlap F1 with a fixed stop-word list, so
every score is reproducible offline. All scorers are pure and
order-invariant; means use compensated summation.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .vocab import split_words

# articles, copulas and prepositions excluded from content-word similarity
STOP_WORDS = frozenset({
    "a", "an", "the",
    "is", "are", "was", "were", "be", "been", "being", "am",
    "in", "on", "at", "of", "to", "for", "with", "by", "from", "into",
    "over", "under", "through", "about",
})

_PUNCTUATION = frozenset(".,?!;:'\"()[]")


def normalize_words(text: str) -> list[str]:
    """Lowercased word sequence with punctuation tokens dropped."""
    return [w for w in split_words(text) if w not in _PUNCTUATION]


def content_words(text: str) -> Counter:
    """Multiset of normalized non-stop-words."""
    return Counter(w for w in normalize_words(text) if w not in STOP_WORDS)


def answer_key(text: str) -> str:
    """Exact-match normalization for QA: lowercase, no punctuation, no articles."""
    return " ".join(w for w in normalize_words(text) if w not in ("a", "an", "the"))


@dataclass
class SimilarityBreakdown:
    f1: float
    matched: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


def overlap_f1(prediction: str, reference: str) -> SimilarityBreakdown:
    """Content-word multiset overlap F1.

    0 iff the texts share no content words; 1 iff their content multisets
    are identical (two empty multisets count as identical).
    """
    pred = content_words(prediction)
    ref = content_words(reference)
    if not pred and not ref:
        return SimilarityBreakdown(1.0)
    common = pred & ref
    n_common = sum(common.values())
    if n_common == 0:
        return SimilarityBreakdown(0.0, missing=sorted(ref))
    precision = n_common / sum(pred.values())
    recall = n_common / sum(ref.values())
    return SimilarityBreakdown(
        2 * precision * recall / (precision + recall),
        matched=sorted(common), missing=sorted((ref - pred)))


@dataclass
class EvalItem:
    """One scored unit: a question, its gold answer, and the prediction(s)."""

    question: str
    gold: str
    prediction: str
    video_id: str = ""
    keywords: frozenset = frozenset()
    details: frozenset = frozenset()
    events: tuple = ()
    question_alt: str = ""
    prediction_alt: str | None = None


@dataclass
class ScoreResult:
    value: float          # report scale (0-5 generative, 0-1 accuracy)
    per_item: list[float] = field(default_factory=list)
    skipped: int = 0
    flagged: int = 0


def _fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def ci_score(items: list[EvalItem]) -> ScoreResult:
    """Word correctness: shared normalized words over expected words, x5."""
    if not items:
        raise ValueError("ci_score: empty item list")
    fractions, skipped = [], 0
    for item in items:
        expected = Counter(normalize_words(item.gold))
        if not expected:
            skipped += 1
            continue
        got = Counter(normalize_words(item.prediction))
        fractions.append(sum((expected & got).values()) / sum(expected.values()))
    return ScoreResult(5.0 * _fmean(fractions), fractions, skipped=skipped)


def do_score(items: list[EvalItem], w_c: float = 0.5, w_s: float = 0.5) -> ScoreResult:
    """Weighted completeness (keywords) and specificity (detail tokens), x5."""
    if not math.isclose(w_c + w_s, 1.0) or w_c < 0 or w_s < 0:
        raise ValueError(f"do_score: weights must be non-negative and sum to 1, got {w_c}, {w_s}")
    scores, flagged = [], 0
    for item in items:
        words = set(normalize_words(item.prediction))
        if item.keywords:
            completeness = len(item.keywords & words) / len(item.keywords)
        else:
            completeness, flagged = 0.0, flagged + 1
        if item.details:
            specificity = len(item.details & words) / len(item.details)
        else:
            specificity, flagged = 0.0, flagged + 1
        scores.append(w_c * completeness + w_s * specificity)
    return ScoreResult(5.0 * _fmean(scores), scores, flagged=flagged)


def context_level(similarity: float) -> int:
    """Map overlap F1 to the six contextual-alignment levels."""
    if similarity >= 0.9:
        return 5
    if similarity >= 0.7:
        return 4
    if similarity >= 0.5:
        return 3
    if similarity >= 0.3:
        return 2
    if similarity > 0.0:
        return 1
    return 0


def cu_score(items: list[EvalItem]) -> ScoreResult:
    levels, skipped = [], 0
    for item in items:
        if not normalize_words(item.gold):
            skipped += 1
            continue
        levels.append(float(context_level(overlap_f1(item.prediction, item.gold).f1)))
    return ScoreResult(_fmean(levels), levels, skipped=skipped)


def order_level(order_fraction: float) -> int:
    """Map the in-order event fraction to the six temporal levels."""
    if order_fraction >= 1.0:
        return 5
    if order_fraction >= 0.75:
        return 4
    if order_fraction >= 0.5:
        return 3
    if order_fraction >= 0.25:
        return 2
    if order_fraction > 0.0:
        return 1
    return 0


def _lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def tu_score(items: list[EvalItem]) -> ScoreResult:
    """In-order fraction of gold events recovered from the prediction.

    With a single gold event the fraction is necessarily 0 or 1.
    """
    levels, skipped = [], 0
    for item in items:
        if not item.events:
            skipped += 1
            continue
        event_set = set(item.events)
        mentioned = [w for w in normalize_words(item.prediction) if w in event_set]
        frac = _lcs_length(list(item.events), mentioned) / len(item.events)
        levels.append(float(order_level(frac)))
    return ScoreResult(_fmean(levels), levels, skipped=skipped)


def consistency_level(s12: float, s_gold: float) -> int:
    """Two-answer agreement (s12) gated by alignment with gold (s_gold)."""
    if s12 >= 0.9 and s_gold >= 0.9:
        return 5
    if s12 >= 0.7 and s_gold >= 0.5:
        return 4
    if s12 >= 0.5:
        return 3
    if s12 >= 0.3:
        return 2
    if s_gold > 0.0:
        return 1
    return 0


def c_score(items: list[EvalItem]) -> ScoreResult:
    levels, skipped = [], 0
    for item in items:
        if item.prediction_alt is None:
            skipped += 1
            continue
        s12 = overlap_f1(item.prediction, item.prediction_alt).f1
        s_gold = min(overlap_f1(item.prediction, item.gold).f1,
                     overlap_f1(item.prediction_alt, item.gold).f1)
        levels.append(float(consistency_level(s12, s_gold)))
    return ScoreResult(_fmean(levels), levels, skipped=skipped)


def mean_score(ci: float, do: float, cu: float, tu: float, c: float) -> float:
    """Arithmetic mean of the five generative scores."""
    return math.fsum((ci, do, cu, tu, c)) / 5.0


def zsqa_accuracy(items: list[EvalItem]) -> ScoreResult:
    """Per-video fraction of exactly-matching answers, averaged over videos.

    Correctness is exact match after normalization (lowercase, punctuation
    and articles stripped). Videos without questions are excluded.
    """
    by_video: dict[str, list[bool]] = {}
    for item in items:
        by_video.setdefault(item.video_id, []).append(
            answer_key(item.prediction) == answer_key(item.gold))
    fractions = [sum(flags) / len(flags) for _, flags in sorted(by_video.items()) if flags]
    skipped = sum(1 for flags in by_video.values() if not flags)
    return ScoreResult(_fmean(fractions), fractions, skipped=skipped)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    ci: float
    do: float
    cu: float
    tu: float
    c: float
    mean: float
    accuracy: dict[str, float]
    weights: tuple[float, float] = (0.5, 0.5)
    items: list[dict] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "CI": self.ci, "DO": self.do, "CU": self.cu, "TU": self.tu,
            "C": self.c, "Mean": self.mean,
            "accuracy": self.accuracy,
            "weights": {"w_c": self.weights[0], "w_s": self.weights[1]},
            "skipped": self.skipped,
            "items": self.items,
        }


def round_half_up(x: float, places: int = 2) -> str:
    q = Decimal("1." + "0" * places)
    return str(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def report_markdown(report: EvalReport, method: str = "this work") -> str:
    lines = [
        "| Method | CI | DO | CU | TU | C | Mean |",
        "|---|---|---|---|---|---|---|",
        "| {} | {} | {} | {} | {} | {} | {} |".format(
            method, *(round_half_up(v) for v in
                      (report.ci, report.do, report.cu, report.tu, report.c, report.mean))),
        "",
        "| Model | " + " | ".join(report.accuracy) + " |",
        "|---|" + "---|" * len(report.accuracy),
        "| {} | ".format(method)
        + " | ".join(round_half_up(100 * v, 1) for v in report.accuracy.values()) + " |",
    ]
    return "\n".join(lines) + "\n"


def build_report(caption_items: list[EvalItem], qa_items: list[EvalItem],
                 dataset_name: str = "synthetic",
                 w_c: float = 0.5, w_s: float = 0.5) -> EvalReport:
    """Score caption items (CI/DO/CU/TU), QA paraphrase items (C), QA accuracy."""
    ci = ci_score(caption_items)
    do = do_score(caption_items, w_c, w_s)
    cu = cu_score(caption_items)
    tu = tu_score(caption_items)
    c = c_score(qa_items) if qa_items else ScoreResult(0.0)
    acc = zsqa_accuracy(qa_items) if qa_items else ScoreResult(0.0)
    item_rows = [
        {"id": it.video_id, "question": it.question, "answer": it.gold,
         "prediction": it.prediction, "prediction_alt": it.prediction_alt}
        for it in caption_items + qa_items
    ]
    return EvalReport(
        ci=ci.value, do=do.value, cu=cu.value, tu=tu.value, c=c.value,
        mean=mean_score(ci.value, do.value, cu.value, tu.value, c.value),
        accuracy={dataset_name: acc.value}, weights=(w_c, w_s), items=item_rows,
        skipped={"ci": ci.skipped, "cu": cu.skipped, "tu": tu.skipped,
                 "c": c.skipped, "accuracy": acc.skipped, "do_flagged": do.flagged})
