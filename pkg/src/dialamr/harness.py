"""Synthetic corpus generation, training loops, evaluation, and the
six-setting ablation over graph configurations.

The synthetic dialogues are built so that the gold relation of most
instances is only recoverable by combining two utterances: an entity is
introduced by name in an early turn, the predicate appears in a later
turn with a pronoun subject, and a coreference cluster links the two.
Both predicates in a dialogue share their object, so surface
co-occurrence alone cannot identify the relation.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .autodiff import Adam, Rng, Tape, backward, save_params
from .dialogue_graph import (
    Dialogue,
    GraphOptions,
    build_dialogue_graph,
    read_dialogues,
)
from .encoders import EncoderConfig, graph_calls, reset_graph_calls, word_node_map
from .metrics import ConvInstance, f1_conversational
from .penman import Alignment, parse_penman
from .projection import (
    RelationVocab,
    SEP_TOKEN,
    concat_tokens,
    global_alignment,
    node_relation_matrix,
    project_edges,
    reverse_label,
)
from .tasks import (
    GenerationFeatures,
    GenerationInstance,
    GenerationModel,
    RelationInstance,
    RelationModel,
    UnderstandingFeatures,
    mean_loss,
)

TASKS = ("understanding", "generation")
ABLATION_ROWS = ("full", "-speaker", "-ident", "-coref", "utter-amr", "text")

RELATION_NAMES = ("admire-01", "blame-01", "fear-01", "help-01")
VERB_SURFACE = {
    "admire-01": "admires",
    "blame-01": "blames",
    "fear-01": "fears",
    "help-01": "helps",
}
NAMES = ("anna", "ben", "carl", "dora", "ella", "fred", "gina", "hugo",
         "iris", "jack", "kira", "liam")
FILLERS = (
    (("the", "weather", "is", "nice"),
     "(w / weather :mod (n / nice-02))", "w\t1\nn\t3\n"),
    (("it", "rained", "all", "day"),
     "(r / rain-01 :duration (d / day))", "r\t1\nd\t3\n"),
    (("the", "meeting", "ran", "late"),
     "(m / meeting :mod (l / late))", "m\t1\nl\t3\n"),
)
WHEN = ("today", "yesterday", "earlier")

SOS_TOKEN = "<sos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 7
    n_dialogues: int = 100
    min_turns: int = 4
    max_turns: int = 6
    pronoun_fraction: float = 0.7


@dataclass(frozen=True)
class RunConfig:
    task: str = "understanding"
    model: str = "dual"  # text | utter-amr | hier | dual
    speaker: bool = True
    same: bool = True
    coref: bool = True
    same_linking: str = "chain"
    dedupe_coref: bool = False
    normalize_inverse: bool = False
    reverse_relations: bool = True
    d_model: int = 64
    layers: int = 2
    graph_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    d_ff: int = 256
    d_rel: int = 16
    dropout: float = 0.1
    max_len: int = 192
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    patience: int = 8
    beam: int = 5
    max_decode_len: int = 12
    seed: int = 7

    def __post_init__(self):
        if self.task not in TASKS:
            raise HarnessError(f"unknown task {self.task!r}")
        if self.model not in ("text", "utter-amr", "hier", "dual"):
            raise HarnessError(f"unknown model {self.model!r}")
        if self.model in ("text", "utter-amr") and (
            self.speaker or self.same or self.coref
        ):
            raise HarnessError(
                f"model {self.model!r} does not take graph options; "
                "set speaker/same/coref to false"
            )

    def graph_options(self) -> GraphOptions:
        return GraphOptions(
            speaker=self.speaker, same=self.same, coref=self.coref,
            same_linking=self.same_linking, dedupe_coref=self.dedupe_coref,
        )


# ---------------------------------------------------------------------------
# config files: TOML-like key = value lines


_BOOL = {"true": True, "false": False}


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    fields = {f: RunConfig.__dataclass_fields__[f].type
              for f in RunConfig.__dataclass_fields__}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HarnessError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip().strip('"')
        if key not in fields:
            raise HarnessError(f"config line {lineno}: unknown key {key!r}")
        kind = fields[key]
        if kind == "bool":
            if value.lower() not in _BOOL:
                raise HarnessError(f"config line {lineno}: bad boolean {value!r}")
            values[key] = _BOOL[value.lower()]
        elif kind == "int":
            values[key] = int(value)
        elif kind == "float":
            values[key] = float(value)
        else:
            values[key] = value
    return RunConfig(**values)


def config_to_text(config: RunConfig) -> str:
    lines = []
    for name in RunConfig.__dataclass_fields__:
        value = getattr(config, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic corpus


def _utterance_obj(tokens, penman, alignment, speaker):
    return {
        "speaker": speaker,
        "tokens": list(tokens),
        "penman": [penman],
        "alignments": [alignment],
    }


def _intro_turn(name: str, rng: Rng, speaker: int) -> dict:
    when = WHEN[rng.choice_index(len(WHEN))]
    tokens = (name, "arrived", when)
    penman = f"(a / arrive-01 :ARG0 (p / {name}))"
    return _utterance_obj(tokens, penman, "a\t1\np\t0\n", speaker)


def _predicate_turn(subject: str | None, verb: str, obj: str, speaker: int) -> dict:
    surface = VERB_SURFACE[verb]
    if subject is None:
        tokens = ("he", surface, obj)
        penman = f"(f / {verb} :ARG0 (h / he) :ARG1 (o / {obj}))"
        align = "f\t1\nh\t0\no\t2\n"
    else:
        tokens = (subject, surface, obj)
        penman = f"(f / {verb} :ARG0 (s / {subject}) :ARG1 (o / {obj}))"
        align = "f\t1\ns\t0\no\t2\n"
    return _utterance_obj(tokens, penman, align, speaker)


def make_dialogue(spec: SyntheticSpec, index: int) -> dict:
    """One synthetic dialogue with a relation instance and a response."""
    rng = Rng(spec.seed).split(0).split(index)
    subjects = list(NAMES)
    first = subjects.pop(rng.choice_index(len(subjects)))
    second = subjects.pop(rng.choice_index(len(subjects)))
    shared_object = subjects.pop(rng.choice_index(len(subjects)))
    verb_a = RELATION_NAMES[rng.choice_index(len(RELATION_NAMES))]
    verb_b = RELATION_NAMES[
        (RELATION_NAMES.index(verb_a) + 1 + rng.choice_index(len(RELATION_NAMES) - 1))
        % len(RELATION_NAMES)
    ]
    n_fillers = min(
        max(spec.min_turns - 4, 0) + rng.choice_index(spec.max_turns - 4 + 1),
        spec.max_turns - 4,
    )
    pronoun_a = rng.uniform(0.0, 1.0, ()) < spec.pronoun_fraction
    pronoun_b = rng.uniform(0.0, 1.0, ()) < spec.pronoun_fraction

    utterances = [_intro_turn(first, rng, 1), _intro_turn(second, rng, 2)]
    for _ in range(n_fillers):
        tokens, penman, align = FILLERS[rng.choice_index(len(FILLERS))]
        utterances.append(
            _utterance_obj(tokens, penman, align, 1 + len(utterances) % 2)
        )
    turn_a = len(utterances)
    utterances.append(
        _predicate_turn(None if pronoun_a else first, verb_a, shared_object,
                        1 + len(utterances) % 2)
    )
    turn_b = len(utterances)
    utterances.append(
        _predicate_turn(None if pronoun_b else second, verb_b, shared_object,
                        1 + len(utterances) % 2)
    )

    coref = []
    if pronoun_a:
        coref.append([[turn_a, 0, "h"], [0, 0, "p"]])
    if pronoun_b:
        coref.append([[turn_b, 0, "h"], [1, 0, "p"]])

    if rng.choice_index(2) == 0:
        a1, gold_verb = first, verb_a
    else:
        a1, gold_verb = second, verb_b
    response = [second, VERB_SURFACE[verb_b], shared_object]
    return {
        "id": f"dlg-{index:05d}",
        "utterances": utterances,
        "coref": coref,
        "relation": {
            "a1": [a1],
            "a2": [shared_object],
            "label": RELATION_NAMES.index(gold_verb),
            "label_name": gold_verb,
        },
        "response": response,
    }


def split_dialogue_ids(ids: list[str]) -> dict[str, list[str]]:
    """Deterministic 8/1/1 split: ids ordered by hash, then sliced."""
    ordered = sorted(ids, key=lambda i: (hashlib.sha1(i.encode()).hexdigest(), i))
    n = len(ordered)
    n_eval = max(1, round(n / 10)) if n >= 3 else 0
    test = ordered[:n_eval]
    dev = ordered[n_eval : 2 * n_eval]
    train = ordered[2 * n_eval :]
    return {"train": train, "dev": dev, "test": test}


def generate_corpus(spec: SyntheticSpec, out_dir: str) -> dict[str, str]:
    """Write train/dev/test JSON-lines files plus a meta file; the same
    spec always produces byte-identical output."""
    os.makedirs(out_dir, exist_ok=True)
    dialogues = [make_dialogue(spec, i) for i in range(spec.n_dialogues)]
    for d in dialogues:
        for utt in d["utterances"]:
            for text in utt["penman"]:
                parse_penman(text)  # every emitted graph must be well formed
    splits = split_dialogue_ids([d["id"] for d in dialogues])
    by_id = {d["id"]: d for d in dialogues}
    paths = {}
    for name in ("train", "dev", "test"):
        path = os.path.join(out_dir, f"{name}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            for ident in splits[name]:
                fh.write(json.dumps(by_id[ident], sort_keys=True) + "\n")
        paths[name] = path
    meta = {
        "seed": spec.seed,
        "n_dialogues": spec.n_dialogues,
        "relations": list(RELATION_NAMES),
        "splits": {k: len(v) for k, v in splits.items()},
    }
    meta_path = os.path.join(out_dir, "meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
    paths["meta"] = meta_path
    return paths


def load_split(corpus_dir: str, name: str) -> list[Dialogue]:
    path = os.path.join(corpus_dir, f"{name}.jsonl")
    with open(path, encoding="utf-8") as fh:
        return read_dialogues(fh.read())


# ---------------------------------------------------------------------------
# vocabularies and feature preparation


@dataclass
class Vocabs:
    word_to_id: dict[str, int]
    concept_to_id: dict[str, int]
    relations: RelationVocab

    @property
    def sos_id(self) -> int:
        return self.word_to_id[SOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.word_to_id[EOS_TOKEN]

    def word_ids(self, tokens) -> np.ndarray:
        unk = self.word_to_id[UNK_TOKEN]
        return np.asarray(
            [self.word_to_id.get(t, unk) for t in tokens], dtype=np.int64
        )

    def id_to_word(self) -> dict[int, str]:
        return {i: w for w, i in self.word_to_id.items()}


def build_vocabs(dialogues: list[Dialogue], config: RunConfig) -> Vocabs:
    words: set[str] = set()
    concepts: set[str] = {"dummy"}
    labels: set[str] = set()
    options = config.graph_options()
    for d in dialogues:
        for utt in d.utterances:
            words.update(utt.tokens)
            for g in utt.graphs:
                concepts.update(c for _, c in g.nodes)
        rel = d.extra.get("relation")
        if rel:
            words.update(rel["a1"])
            words.update(rel["a2"])
        words.update(d.extra.get("response", ()))
        dg = build_dialogue_graph(list(d.utterances), list(d.coref), options)
        for _, label, _ in dg.graph.edges:
            labels.add(label)
            if config.reverse_relations:
                labels.add(reverse_label(label))
    specials = [SOS_TOKEN, EOS_TOKEN, SEP_TOKEN, UNK_TOKEN]
    word_to_id = {w: i for i, w in enumerate(specials + sorted(words))}
    concept_to_id = {c: i for i, c in enumerate(sorted(concepts))}
    return Vocabs(word_to_id, concept_to_id, RelationVocab.from_labels(labels))


def _extend_alignment(alignment: Alignment, dialogue_graph, arg_tokens,
                      positions, n_tokens) -> Alignment:
    """Also align every node whose concept equals an argument token to
    that argument's appended positions."""
    entries = {k: list(v) for k, v in alignment.entries.items()}
    concepts = dict(dialogue_graph.graph.nodes)
    for token, pos in zip(arg_tokens, positions):
        for nid, concept in concepts.items():
            if concept == token:
                entries.setdefault(nid, []).append(pos)
    return Alignment(
        {k: tuple(sorted(set(v))) for k, v in entries.items()}, n_tokens
    )


def _build_graph(dialogue: Dialogue, config: RunConfig):
    options = (
        GraphOptions(speaker=False, same=False, coref=False)
        if config.model == "utter-amr"
        else config.graph_options()
    )
    return build_dialogue_graph(list(dialogue.utterances), list(dialogue.coref),
                                options)


def prepare_understanding(dialogue: Dialogue, config: RunConfig,
                          vocabs: Vocabs) -> UnderstandingFeatures:
    rel = dialogue.extra.get("relation")
    if not rel:
        raise HarnessError(f"dialogue {dialogue.id} has no relation annotation")
    tokens, _ = concat_tokens(list(dialogue.utterances))
    a1 = list(rel["a1"])
    a2 = list(rel["a2"])
    full = tokens + a1 + [SEP_TOKEN] + a2
    a1_span = (len(tokens), len(tokens) + len(a1))
    a2_span = (a1_span[1] + 1, a1_span[1] + 1 + len(a2))
    inst = RelationInstance(dialogue.id, a1_span, a2_span, int(rel["label"]))
    feats = UnderstandingFeatures(inst, vocabs.word_ids(full))
    if config.model == "text":
        return feats
    dg = _build_graph(dialogue, config)
    alignment = global_alignment(dg, list(dialogue.utterances), n_tokens=len(full))
    arg_positions = list(range(*a1_span)) + list(range(*a2_span))
    arg_tokens = a1 + a2
    alignment = _extend_alignment(alignment, dg, arg_tokens, arg_positions, len(full))
    if config.model == "hier":
        projected = project_edges(dg, alignment, len(full),
                                  normalize_inverse=config.normalize_inverse)
        feats.token_rel_ids = projected.reindexed(vocabs.relations).labels
        return feats
    feats.node_ids = np.asarray(
        [vocabs.concept_to_id[c] for _, c in dg.graph.nodes], dtype=np.int64
    )
    feats.node_rel_ids = node_relation_matrix(
        dg, vocabs.relations, add_reverse=config.reverse_relations
    ).labels
    node_rows = {nid: i for i, nid in enumerate(dg.graph.node_ids)}
    feats.token_node_rows = word_node_map(alignment, node_rows, len(full),
                                          dummy_row=0)
    return feats


def prepare_generation(dialogue: Dialogue, config: RunConfig,
                       vocabs: Vocabs) -> GenerationFeatures:
    response = dialogue.extra.get("response")
    if not response:
        raise HarnessError(f"dialogue {dialogue.id} has no response annotation")
    tokens, _ = concat_tokens(list(dialogue.utterances))
    target = tuple(vocabs.word_ids(list(response)).tolist()) + (vocabs.eos_id,)
    inst = GenerationInstance(dialogue.id, target)
    feats = GenerationFeatures(inst, vocabs.word_ids(tokens))
    if config.model == "text":
        return feats
    dg = _build_graph(dialogue, config)
    alignment = global_alignment(dg, list(dialogue.utterances),
                                 n_tokens=len(tokens))
    if config.model == "hier":
        projected = project_edges(dg, alignment, len(tokens),
                                  normalize_inverse=config.normalize_inverse)
        feats.token_rel_ids = projected.reindexed(vocabs.relations).labels
        return feats
    feats.node_ids = np.asarray(
        [vocabs.concept_to_id[c] for _, c in dg.graph.nodes], dtype=np.int64
    )
    feats.node_rel_ids = node_relation_matrix(
        dg, vocabs.relations, add_reverse=config.reverse_relations
    ).labels
    return feats


def encoder_config(config: RunConfig, vocabs: Vocabs) -> EncoderConfig:
    return EncoderConfig(
        word_vocab=len(vocabs.word_to_id),
        concept_vocab=len(vocabs.concept_to_id),
        relation_vocab=len(vocabs.relations),
        d_model=config.d_model,
        layers=config.layers,
        graph_layers=config.graph_layers,
        decoder_layers=config.decoder_layers,
        heads=config.heads,
        d_ff=config.d_ff,
        d_rel=config.d_rel,
        dropout=config.dropout,
        max_len=config.max_len,
    )


def build_model(config: RunConfig, vocabs: Vocabs, n_classes: int):
    cfg = encoder_config(config, vocabs)
    rng = Rng(config.seed).split(1)
    if config.task == "understanding":
        return RelationModel(cfg, config.model, n_classes, rng)
    return GenerationModel(cfg, config.model, rng,
                           sos_id=vocabs.sos_id, eos_id=vocabs.eos_id)


# ---------------------------------------------------------------------------
# training and evaluation


@dataclass
class TrainResult:
    best_metric: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None
    log_path: str | None = None
    model: object = None
    vocabs: Vocabs | None = None


def _dev_metric(config, model, dev_feats, vocabs) -> float:
    if config.task == "understanding":
        preds = [model.predict(f) for f in dev_feats]
        golds = [f.instance.gold for f in dev_feats]
        return metrics.macro_f1(preds, golds, model.n_classes)
    id_to_word = vocabs.id_to_word()
    hyps, refs = [], []
    for f in dev_feats:
        out = model.decode(f, beam=1, max_len=config.max_decode_len)
        hyps.append([id_to_word[t] for t in out])
        refs.append([id_to_word[t] for t in f.instance.target[:-1]])
    return metrics.bleu_n(hyps, refs, 1)


def train(config: RunConfig, corpus_dir: str, out_dir: str | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Train per the config; keeps the best-dev checkpoint and writes
    JSON-lines epoch logs when out_dir is given."""
    train_dialogues = load_split(corpus_dir, "train")
    dev_dialogues = load_split(corpus_dir, "dev")
    vocabs = build_vocabs(train_dialogues + dev_dialogues +
                          load_split(corpus_dir, "test"), config)
    prepare = (prepare_understanding if config.task == "understanding"
               else prepare_generation)
    train_feats = [prepare(d, config, vocabs) for d in train_dialogues]
    dev_feats = [prepare(d, config, vocabs) for d in dev_dialogues]
    model = build_model(config, vocabs, n_classes=len(RELATION_NAMES))
    optimizer = Adam(model.params, lr=config.lr)
    shuffle_rng = Rng(config.seed).split(2)
    dropout_rng = Rng(config.seed).split(3)

    log_lines: list[str] = []
    history: list[dict] = []
    best_metric = -1.0
    best_epoch = -1
    best_snapshot: dict[str, np.ndarray] | None = None
    steps = 0
    stop = False
    for epoch in range(config.epochs):
        order = shuffle_rng.gen.permutation(len(train_feats))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_feats[i] for i in order[start : start + config.batch_size]]
            optimizer.zero_grad()
            with Tape():
                losses = [
                    model.loss(f, training=True, rng=dropout_rng) for f in batch
                ]
                loss = mean_loss(losses)
                backward(loss)
                epoch_loss += loss.item()
            optimizer.step()
            n_batches += 1
            steps += 1
            if max_steps is not None and steps >= max_steps:
                stop = True
                break
        dev_metric = _dev_metric(config, model, dev_feats, vocabs)
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "dev_metric": dev_metric,
        }
        history.append(entry)
        log_lines.append(json.dumps(entry, sort_keys=True))
        if dev_metric > best_metric + 1e-12:
            best_metric = dev_metric
            best_epoch = epoch
            best_snapshot = {k: p.data.copy() for k, p in model.params.items()}
        elif epoch - best_epoch >= config.patience:
            stop = True
        if stop:
            break
    if best_snapshot is not None:
        for name, data in best_snapshot.items():
            model.params[name].data[...] = data
    result = TrainResult(best_metric=best_metric, best_epoch=best_epoch,
                         history=history)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.log_path = os.path.join(out_dir, "train_log.jsonl")
        with open(result.log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
        result.checkpoint_path = os.path.join(out_dir, "model.ckpt")
        save_params(model.params, result.checkpoint_path)
    result.model = model
    result.vocabs = vocabs
    return result


def _conv_instances(dialogues: list[Dialogue]) -> list[ConvInstance]:
    out = []
    for d in dialogues:
        rel = d.extra["relation"]
        out.append(
            ConvInstance(
                turns=tuple(tuple(u.tokens) for u in d.utterances),
                a1_tokens=tuple(rel["a1"]),
                a2_tokens=tuple(rel["a2"]),
                gold=int(rel["label"]),
                ref=d,
            )
        )
    return out


def evaluate(config: RunConfig, model, vocabs: Vocabs,
             dialogues: list[Dialogue], with_f1c: bool = True):
    """Evaluate on a split; returns (EvalReport, prediction dump lines)."""
    if config.task == "understanding":
        feats = [prepare_understanding(d, config, vocabs) for d in dialogues]
        preds = [model.predict(f) for f in feats]
        golds = [f.instance.gold for f in feats]
        dumps = [
            json.dumps({"id": d.id, "pred": p, "gold": g}, sort_keys=True)
            for d, p, g in zip(dialogues, preds, golds)
        ]
        f1c = None
        if with_f1c:
            def predict_truncated(inst: ConvInstance, last_turn: int) -> int:
                truncated = inst.ref.truncated(last_turn)
                return model.predict(
                    prepare_understanding(truncated, config, vocabs)
                )

            f1c = f1_conversational(
                _conv_instances(dialogues), predict_truncated,
                len(RELATION_NAMES),
            )
        report = metrics.understanding_report(preds, golds,
                                              len(RELATION_NAMES), f1c=f1c)
        return report, dumps
    feats = [prepare_generation(d, config, vocabs) for d in dialogues]
    id_to_word = vocabs.id_to_word()
    hyps, refs, dumps = [], [], []
    for d, f in zip(dialogues, feats):
        out = model.decode(f, beam=config.beam, max_len=config.max_decode_len)
        hyp = [id_to_word[t] for t in out]
        ref = [id_to_word[t] for t in f.instance.target[:-1]]
        hyps.append(hyp)
        refs.append(ref)
        dumps.append(json.dumps(
            {"id": d.id, "hypothesis": hyp, "reference": ref}, sort_keys=True
        ))
    return metrics.generation_report(hyps, refs), dumps


def ablation_config(base: RunConfig, row: str) -> RunConfig:
    if row == "full":
        return replace(base, model="dual", speaker=True, same=True, coref=True)
    if row == "-speaker":
        return replace(base, model="dual", speaker=False, same=True, coref=True)
    if row == "-ident":
        return replace(base, model="dual", speaker=True, same=False, coref=True)
    if row == "-coref":
        return replace(base, model="dual", speaker=True, same=True, coref=False)
    if row == "utter-amr":
        return replace(base, model="utter-amr", speaker=False, same=False,
                       coref=False)
    if row == "text":
        return replace(base, model="text", speaker=False, same=False, coref=False)
    raise HarnessError(f"unknown ablation row {row!r}")


def run_ablation(base: RunConfig, corpus_dir: str,
                 seeds: list[int] | None = None) -> dict:
    """Train and evaluate the six graph settings on the dev split with
    shared seeds; returns the table as a dict."""
    seeds = seeds or [base.seed]
    table: dict[str, dict] = {}
    for row in ABLATION_ROWS:
        per_seed = []
        for seed in seeds:
            config = replace(ablation_config(base, row), seed=seed)
            reset_graph_calls()
            result = train(config, corpus_dir)
            if row == "text" and graph_calls() != 0:
                raise HarnessError(
                    "text setting touched graph code "
                    f"({graph_calls()} calls)"
                )
            per_seed.append(result.best_metric)
        table[row] = {
            "mean_dev_metric": sum(per_seed) / len(per_seed),
            "per_seed": per_seed,
        }
    return {"task": base.task, "seeds": seeds, "rows": table}


def ablation_table_text(report: dict) -> str:
    width = max(len(r) for r in report["rows"])
    lines = [f"{'setting'.ljust(width)}  dev metric"]
    for row in ABLATION_ROWS:
        mean = report["rows"][row]["mean_dev_metric"]
        lines.append(f"{row.ljust(width)}  {mean:.4f}")
    return "\n".join(lines) + "\n"
