"""Evaluation metrics: macro F1, conversational F1 on truncated
dialogues, corpus BLEU-n, and distinct-n diversity.

Distinct-n divides the number of distinct n-grams by the total number of
generated words (for bigrams too); set denominator="ngrams" for the
per-n-gram variant.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field


@dataclass
class EvalReport:
    values: dict[str, float] = field(default_factory=dict)
    support: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.values, "support": self.support}, sort_keys=True
        )

    def to_table(self) -> str:
        if not self.values:
            return "(no metrics)\n"
        width = max(len(k) for k in self.values)
        lines = [f"{k.ljust(width)}  {self.values[k]:.4f}" for k in self.values]
        return "\n".join(lines) + "\n"


def _confusion(preds, golds, n_classes):
    tp = Counter()
    fp = Counter()
    fn = Counter()
    for p, g in zip(preds, golds):
        if not (0 <= g < n_classes and 0 <= p < n_classes):
            raise ValueError(f"class id out of range: pred={p} gold={g}")
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    return tp, fp, fn


def macro_f1(preds, golds, n_classes: int, include_absent: bool = False) -> float:
    """Mean per-class F1.  By default classes absent from both gold and
    predictions are excluded from the average."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    tp, fp, fn = _confusion(preds, golds, n_classes)
    scores = []
    for c in range(n_classes):
        present = tp[c] + fp[c] + fn[c] > 0
        if not present and not include_absent:
            continue
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        recall = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores.append(f1)
    return sum(scores) / len(scores) if scores else 0.0


def contains_subsequence(haystack, needle) -> bool:
    needle = list(needle)
    haystack = list(haystack)
    if not needle:
        return False
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i : i + len(needle)] == needle:
            return True
    return False


def first_mention_turn(turns, arg_tokens) -> int | None:
    for i, turn in enumerate(turns):
        if contains_subsequence(turn, arg_tokens):
            return i
    return None


def co_mention_turn(turns, a1_tokens, a2_tokens) -> int | None:
    """Earliest turn index after which both arguments have appeared."""
    first_a1 = first_mention_turn(turns, a1_tokens)
    first_a2 = first_mention_turn(turns, a2_tokens)
    if first_a1 is None or first_a2 is None:
        return None
    return max(first_a1, first_a2)


@dataclass(frozen=True)
class ConvInstance:
    """What conversational F1 needs: per-turn tokens, the argument
    token sequences, the gold class, and an opaque reference the
    prediction callback can use to rebuild model inputs."""

    turns: tuple[tuple[str, ...], ...]
    a1_tokens: tuple[str, ...]
    a2_tokens: tuple[str, ...]
    gold: int
    ref: object = None


def f1_conversational(instances, predict, n_classes: int,
                      truncation=co_mention_turn,
                      include_absent: bool = False) -> float:
    """Macro F1 with each dialogue truncated at the earliest turn where
    both arguments have been mentioned; predict(instance, last_turn)
    returns a class id.  Instances whose arguments never appear are
    skipped with a warning."""
    preds, golds = [], []
    for inst in instances:
        last_turn = truncation(inst.turns, inst.a1_tokens, inst.a2_tokens)
        if last_turn is None:
            warnings.warn(
                f"arguments never mentioned; skipping instance {inst.ref!r}"
            )
            continue
        preds.append(predict(inst, last_turn))
        golds.append(inst.gold)
    return macro_f1(preds, golds, n_classes, include_absent=include_absent)


def _ngram_counts(tokens, n) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypotheses, references, n: int) -> float:
    """Corpus-level BLEU with orders 1..n: modified n-gram precision,
    geometric mean, brevity penalty; counts are add-1 smoothed for
    orders above 1."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if n < 1:
        raise ValueError("order must be >= 1")
    match = [0] * (n + 1)
    guess = [0] * (n + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for k in range(1, n + 1):
            hyp_counts = _ngram_counts(hyp, k)
            ref_counts = _ngram_counts(ref, k)
            match[k] += sum((hyp_counts & ref_counts).values())
            guess[k] += sum(hyp_counts.values())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        if k == 1:
            if match[1] == 0:
                return 0.0
            p = match[1] / guess[1]
        else:
            p = (match[k] + 1.0) / (guess[k] + 1.0)
        log_sum += math.log(p)
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_sum / n)


def distinct_n(hypotheses, n: int, denominator: str = "words") -> float:
    """Distinct n-grams over total generated words (the quoted protocol)
    or over total n-grams (denominator="ngrams")."""
    if denominator not in ("words", "ngrams"):
        raise ValueError(f"unknown denominator {denominator!r}")
    grams = set()
    words = 0
    total_ngrams = 0
    for hyp in hypotheses:
        hyp = list(hyp)
        words += len(hyp)
        for i in range(len(hyp) - n + 1):
            grams.add(tuple(hyp[i : i + n]))
            total_ngrams += 1
    denom = words if denominator == "words" else total_ngrams
    return len(grams) / denom if denom else 0.0


def generation_report(hypotheses, references) -> EvalReport:
    values = {}
    for k in (1, 2, 3, 4):
        values[f"bleu-{k}"] = bleu_n(hypotheses, references, k)
    for k in (1, 2):
        values[f"distinct-{k}"] = distinct_n(hypotheses, k)
    return EvalReport(values=values)


def understanding_report(preds, golds, n_classes: int,
                         f1c: float | None = None) -> EvalReport:
    support = Counter(golds)
    values = {"macro_f1": macro_f1(preds, golds, n_classes)}
    if f1c is not None:
        values["f1_c"] = f1c
    return EvalReport(values=values,
                      support={str(k): support[k] for k in sorted(support)})
