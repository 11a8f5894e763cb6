"""Reference values for the text metrics: ROUGE from the `rouge-score`
package, corpus BLEU from NLTK, relaxed exact match from the SQuAD answer
normalizer. Writes crates/core/tests/fixtures/metric_oracle.json."""

import json
import pathlib
import random
import re
import string
import warnings

from nltk.translate.bleu_score import corpus_bleu
from rouge_score import rouge_scorer

warnings.filterwarnings("ignore")

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/metric_oracle.json"

VOCAB = ("cat dog bird sat ran on in the a mat tree house river quickly slowly big small red blue "
         "over under near far jumped").split()


def toy_corpus(rng, n=20):
    pairs = []
    for _ in range(n):
        ref = [rng.choice(VOCAB) for _ in range(rng.randint(5, 12))]
        hyp = list(ref)
        for _ in range(rng.randint(0, 3)):
            op = rng.random()
            pos = rng.randrange(len(hyp))
            if op < 0.5:
                hyp[pos] = rng.choice(VOCAB)
            elif op < 0.75 and len(hyp) > 4:
                del hyp[pos]
            else:
                hyp.insert(pos, rng.choice(VOCAB))
        pairs.append((" ".join(hyp), " ".join(ref)))
    return pairs


def squad_normalize(s):
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def relaxed_em(pred, refs):
    return 1.0 if any(squad_normalize(pred) == squad_normalize(r) for r in refs) else 0.0


def em_table(rng):
    answers = [
        ["Paris", "City of Light"],
        ["Eiffel Tower"],
        ["The Beatles", "Beatles"],
        ["George Washington"],
        ["an apple a day"],
        ["U.S.A.", "United States"],
        ["Rock 'n' Roll"],
        ["42"],
        ["The Hague"],
        ["Mount Everest", "Everest"],
    ]
    decorations = [
        lambda a: a,
        lambda a: a.upper(),
        lambda a: "the " + a,
        lambda a: "  " + a + "  ",
        lambda a: a + ".",
        lambda a: "A " + a + "!",
        lambda a: a.replace(" ", "  "),
        lambda a: '"' + a + '"',
        lambda a: a + ", " + a,
        lambda a: "an " + a.lower() + "?",
    ]
    wrong = ["London", "Tower Bridge", "Rolling Stones", "Lincoln", "pear", "Canada", "Jazz", "41", "Amsterdam", "K2"]
    cases = []
    for i in range(50):
        refs = answers[i % len(answers)]
        if i % 5 == 4:
            pred = rng.choice(decorations)(wrong[i % len(wrong)])
        else:
            pred = decorations[(i * 3 + i // 10) % len(decorations)](rng.choice(refs))
        cases.append({"prediction": pred, "references": refs, "expected": relaxed_em(pred, refs)})
    return cases


def main():
    rng = random.Random(20240601)
    pairs = toy_corpus(rng)
    scorer = rouge_scorer.RougeScorer(["rouge2", "rougeL"], use_stemmer=False)
    rows = []
    for hyp, ref in pairs:
        s = scorer.score(ref, hyp)
        rows.append({"prediction": hyp, "reference": ref, "rouge2": s["rouge2"].fmeasure, "rougeL": s["rougeL"].fmeasure})
    bleu = corpus_bleu([[r.split()] for _, r in pairs], [h.split() for h, _ in pairs])

    # A two-reference variant exercises clipping by the max reference count
    # and closest-reference length.
    multi_refs = [[r.split(), h.split()[:-1]] for h, r in pairs]
    bleu_multi = corpus_bleu(multi_refs, [h.split() for h, _ in pairs])

    values = {
        "pairs": rows,
        "bleu": bleu,
        "bleu_two_refs": bleu_multi,
        "relaxed_em": em_table(rng),
    }
    OUT.write_text(json.dumps(values, indent=2) + "\n")
    print(f"wrote {OUT}: bleu={bleu:.6f} two-ref bleu={bleu_multi:.6f}")


if __name__ == "__main__":
    main()
