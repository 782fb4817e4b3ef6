"""Text metrics for driving VQA: accuracy, match, BLEU, ROUGE-L, CIDEr-D.

All corpus metrics operate on normalized token lists produced by
:func:`normalize`. ``language`` folds BLEU, ROUGE-L and CIDEr into one number
and ``final`` is the weighted combination of judge, language, match and
accuracy.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .core import WEIGHT_KEYS, MetricConfig, ObjectTag, QaRecord, TaskCategory, validate_weights
from .errors import ToolkitError
from .tags import extract_tags

_TOKEN = re.compile(r"<c\d+(?:,[^<>\s]*)?>|[^\s<]+|<")
_TERMINAL_PUNCT = ".,!?"

STOPWORDS = frozenset(
    """
    a an the and or but if of to in on at by for with from into onto over under
    is are was were be been being am do does did has have had will would shall
    should can could may might must it its this that these those there here
    as than then so such very too also just only
    i you he she we they me him her us them my your his our their
    what which who whom whose when where why how
    """.split()
)


def normalize(text: str, lowercase: bool = True, strip_punctuation: bool = True) -> list[str]:
    """Tokenize for scoring.

    Object tags such as ``<c1>`` or ``<c1,CAM_FRONT,1.0,2.0>`` stay single
    tokens; other tokens lose trailing ``. , ! ?``.
    """
    if lowercase:
        text = text.lower()
    tokens = []
    for tok in _TOKEN.findall(text):
        if strip_punctuation and not tok.startswith("<"):
            tok = tok.rstrip(_TERMINAL_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class EvalPair:
    qa_id: str
    category: TaskCategory
    candidate: str
    references: tuple[str, ...]
    gt_tags: tuple[ObjectTag, ...] = ()
    cand_tags: tuple[ObjectTag, ...] = ()
    question: str = ""

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError(f"pair {self.qa_id} has no references")

    @classmethod
    def from_record(cls, record: QaRecord, candidate: str) -> "EvalPair":
        return cls(
            qa_id=record.qa_id,
            category=record.category,
            candidate=candidate,
            references=(record.gt_answer,),
            gt_tags=record.gt_tags,
            cand_tags=tuple(extract_tags(candidate)),
            question=record.question,
        )


def _require(pairs: Sequence[EvalPair]) -> None:
    if not pairs:
        raise ToolkitError("EMPTY_EVAL_SET", "no pairs to score")


def _tokenized(pairs: Sequence[EvalPair], cfg: MetricConfig) -> list[tuple[list[str], list[list[str]]]]:
    norm = lambda s: normalize(s, cfg.lowercase, cfg.strip_punctuation)  # noqa: E731
    return [(norm(p.candidate), [norm(r) for r in p.references]) for p in pairs]


def accuracy(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> float:
    _require(pairs)
    cfg = config or MetricConfig()
    hits = sum(bool(cand) and any(cand == ref for ref in refs) for cand, refs in _tokenized(pairs, cfg))
    return hits / len(pairs)


def match_pair(pair: EvalPair, config: MetricConfig | None = None) -> float:
    """Tag recall when the ground truth names objects, else content-word recall."""
    cfg = config or MetricConfig()
    if pair.gt_tags:
        gt_ids = {t.id for t in pair.gt_tags}
        cand_ids = {t.id for t in pair.cand_tags}
        return len(gt_ids & cand_ids) / len(gt_ids)
    cand = set(normalize(pair.candidate, cfg.lowercase, cfg.strip_punctuation))
    if not cand:
        return 0.0
    best = 0.0
    for ref_text in pair.references:
        ref = set(normalize(ref_text, cfg.lowercase, cfg.strip_punctuation))
        content = ref - STOPWORDS or ref
        if content:
            best = max(best, len(content & cand) / len(content))
    return best


def match(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> float:
    _require(pairs)
    return sum(match_pair(p, config) for p in pairs) / len(pairs)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_scores(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> list[float]:
    """Corpus BLEU-1 .. BLEU-``bleu_max_order``."""
    _require(pairs)
    cfg = config or MetricConfig()
    max_n = cfg.bleu_max_order
    matches = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    cand_len = ref_len = 0
    for cand, refs in _tokenized(pairs, cfg):
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_n + 1):
            counts = _ngram_counts(cand, n)
            max_ref: Counter[tuple[str, ...]] = Counter()
            for ref in refs:
                max_ref |= _ngram_counts(ref, n)
            matches[n] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n] += sum(counts.values())

    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    log_sum = 0.0
    zero = False
    for n in range(1, max_n + 1):
        if totals[n] == 0:
            zero = True
        elif matches[n] == 0:
            if cfg.bleu_smoothing > 0:
                log_sum += math.log(cfg.bleu_smoothing / totals[n])
            else:
                zero = True
        else:
            log_sum += math.log(matches[n] / totals[n])
        scores.append(0.0 if zero else bp * math.exp(log_sum / n))
    return scores


def bleu(pairs: Sequence[EvalPair], n: int, config: MetricConfig | None = None) -> float:
    if not 1 <= n <= 4:
        raise ToolkitError("USAGE", "BLEU order must be in 1..4", n=n)
    cfg = config or MetricConfig()
    if cfg.bleu_max_order < n:
        cfg = MetricConfig.from_dict({**cfg.to_dict(), "bleu_max_order": n})
    return bleu_scores(pairs, cfg)[n - 1]


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand: Sequence[str], refs: Iterable[Sequence[str]], beta: float) -> float:
    if not cand:
        return 0.0
    best = 0.0
    for ref in refs:
        lcs = lcs_length(cand, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(cand), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def rouge_l(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> float:
    _require(pairs)
    cfg = config or MetricConfig()
    scores = [rouge_l_pair(c, refs, cfg.rouge_beta) for c, refs in _tokenized(pairs, cfg)]
    return sum(scores) / len(scores)


def _tfidf(tokens: Sequence[str], max_n: int, idf) -> tuple[list[dict[tuple[str, ...], float]], list[float]]:
    vecs, norms = [], []
    for n in range(1, max_n + 1):
        vec = {g: c * idf(g) for g, c in _ngram_counts(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_per_pair(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> list[float]:
    """CIDEr-D for each pair, with document frequencies taken from this corpus's references."""
    _require(pairs)
    cfg = config or MetricConfig()
    max_n, sigma = cfg.cider_max_order, cfg.cider_sigma
    tokenized = _tokenized(pairs, cfg)

    doc_freq: Counter[tuple[str, ...]] = Counter()
    for _, refs in tokenized:
        grams = set()
        for ref in refs:
            for n in range(1, max_n + 1):
                grams.update(_ngram_counts(ref, n))
        doc_freq.update(grams)
    log_n_docs = math.log(len(pairs))

    def idf(gram: tuple[str, ...]) -> float:
        # n-grams absent from every reference count as appearing once
        return log_n_docs - math.log(max(1, doc_freq[gram]))

    scores = []
    for cand, refs in tokenized:
        if not cand:
            scores.append(0.0)
            continue
        c_vecs, c_norms = _tfidf(cand, max_n, idf)
        per_order = [0.0] * max_n
        for ref in refs:
            r_vecs, r_norms = _tfidf(ref, max_n, idf)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma**2))
            for k in range(max_n):
                if c_norms[k] == 0 or r_norms[k] == 0:
                    continue
                dot = sum(min(v, r_vecs[k].get(g, 0.0)) * r_vecs[k].get(g, 0.0) for g, v in c_vecs[k].items())
                per_order[k] += min(1.0, dot / (c_norms[k] * r_norms[k])) * penalty
        scores.append(cfg.cider_scale * sum(per_order) / max_n / len(refs))
    return scores


def cider(pairs: Sequence[EvalPair], config: MetricConfig | None = None) -> float:
    scores = cider_per_pair(pairs, config)
    return sum(scores) / len(scores)


def language_score(bleu: Sequence[float], rouge_l: float, cider: float, cider_scale: float = 10.0) -> float:
    return (sum(bleu) / len(bleu) + rouge_l + cider / cider_scale) / 3.0


def effective_weights(weights: Mapping[str, float], judge_available: bool) -> dict[str, float]:
    """Weights actually applied; without a judge its share is spread proportionally."""
    validate_weights(weights)
    weights = {k: float(weights[k]) for k in WEIGHT_KEYS}
    if judge_available:
        return weights
    rest = 1.0 - weights["judge"]
    if rest <= 0:
        raise ToolkitError("WEIGHTS_INVALID", "judge weight is 1 but judging is disabled")
    return {k: (0.0 if k == "judge" else v / rest) for k, v in weights.items()}


def final_score(
    accuracy: float,
    match: float,
    language: float,
    judge: float | None,
    weights: Mapping[str, float] | None = None,
) -> float:
    """Weighted combination; ``judge`` is on the 0-100 scale or None when disabled."""
    w = effective_weights(weights or MetricConfig().final_weights, judge is not None)
    judge_part = w["judge"] * (judge / 100.0) if judge is not None else 0.0
    return judge_part + w["language"] * language + w["match"] * match + w["accuracy"] * accuracy


_CLOSED_FORM = re.compile(r"yes|no|[a-d]", re.IGNORECASE)


def is_closed_form(pair: EvalPair, config: MetricConfig | None = None) -> bool:
    """Yes/no or single-letter multiple-choice references."""
    cfg = config or MetricConfig()
    ref = normalize(pair.references[0], cfg.lowercase, cfg.strip_punctuation)
    return len(ref) == 1 and bool(_CLOSED_FORM.fullmatch(ref[0]))


@dataclass(frozen=True)
class CorpusScores:
    n_pairs: int
    accuracy: float
    match: float
    bleu: tuple[float, ...]
    rouge_l: float
    cider: float
    language: float
    final: float
    judge: float | None = None
    final_mode: str = "full"
    weights_used: dict[str, float] = field(default_factory=dict)
    closed_form_pairs: int = 0
    closed_form_accuracy: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_pairs": self.n_pairs,
            "accuracy": self.accuracy,
            "judge": self.judge,
            "match": self.match,
            "bleu": list(self.bleu),
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "language": self.language,
            "final": self.final,
            "final_mode": self.final_mode,
            "weights_used": dict(self.weights_used),
            "closed_form_pairs": self.closed_form_pairs,
            "closed_form_accuracy": self.closed_form_accuracy,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CorpusScores":
        return cls(
            n_pairs=data["n_pairs"],
            accuracy=data["accuracy"],
            match=data["match"],
            bleu=tuple(data["bleu"]),
            rouge_l=data["rouge_l"],
            cider=data["cider"],
            language=data["language"],
            final=data["final"],
            judge=data.get("judge"),
            final_mode=data.get("final_mode", "full"),
            weights_used=dict(data.get("weights_used", {})),
            closed_form_pairs=data.get("closed_form_pairs", 0),
            closed_form_accuracy=data.get("closed_form_accuracy"),
        )


def score_corpus(
    pairs: Sequence[EvalPair],
    config: MetricConfig | None = None,
    judge_scores: Sequence[float] | None = None,
) -> CorpusScores:
    """Every metric over one corpus. ``judge_scores`` are 0-100 per pair, or None."""
    _require(pairs)
    cfg = config or MetricConfig()
    bleu_vals = bleu_scores(pairs, cfg)
    rouge_val = rouge_l(pairs, cfg)
    cider_val = cider(pairs, cfg)
    acc = accuracy(pairs, cfg)
    mat = match(pairs, cfg)
    lang = language_score(bleu_vals, rouge_val, cider_val, cfg.cider_scale)
    judge = sum(judge_scores) / len(judge_scores) if judge_scores else None
    weights = effective_weights(cfg.final_weights, judge is not None)
    closed = [p for p in pairs if is_closed_form(p, cfg)]
    return CorpusScores(
        n_pairs=len(pairs),
        accuracy=acc,
        match=mat,
        bleu=tuple(bleu_vals),
        rouge_l=rouge_val,
        cider=cider_val,
        language=lang,
        final=final_score(acc, mat, lang, judge, cfg.final_weights),
        judge=judge,
        final_mode="full" if judge is not None else "no-judge",
        weights_used=weights,
        closed_form_pairs=len(closed),
        closed_form_accuracy=accuracy(closed, cfg) if closed else None,
    )
