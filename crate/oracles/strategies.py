"""Reference values for the strategy scores, computed from the formulas with
plain Python (and NLTK for sentence BLEU). Writes
crates/core/tests/fixtures/strategy_oracle.json."""

import json
import math
import pathlib
import warnings

from nltk.translate.bleu_score import sentence_bleu

warnings.filterwarnings("ignore")

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/strategy_oracle.json"


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def cos(a, b):
    a, b = unit(a), unit(b)
    return sum(x * y for x, y in zip(a, b))


def nsp(logprobs):
    if not logprobs:
        return 0.0
    return 1.0 - math.exp(sum(logprobs) / len(logprobs))


def mte(positions):
    if not positions:
        return 0.0
    total = 0.0
    for alts in positions:
        ps = [math.exp(lp) for lp in alts]
        h = -sum(p * math.log(p) for p in ps if p > 0)
        r = 1.0 - sum(ps)
        if r > 0:
            h -= r * math.log(r)
        total += h
    return total / len(positions)


def delfy_weight(cnt_u, cnt_l, lam):
    return math.log(1 + cnt_u) * math.exp(-lam * cnt_l)


def pair_bleu(hyp, ref):
    n = min(4, len(hyp), len(ref))
    if n == 0:
        return 0.0
    return sentence_bleu([ref], hyp, weights=tuple([1.0 / n] * n))


def bleuvar(samples):
    toks = [s.lower().split() for s in samples]
    total = 0.0
    for i in range(len(toks)):
        for j in range(len(toks)):
            if i != j:
                total += (1.0 - pair_bleu(toks[i], toks[j])) ** 2
    return total


def idds(unlabeled, labeled, lam):
    out = {}
    for x, ex in unlabeled.items():
        su = sum(cos(ex, eu) for eu in unlabeled.values()) / len(unlabeled)
        sl = sum(cos(ex, el) for el in labeled.values()) / len(labeled) if labeled else 0.0
        out[x] = su - lam * sl
    return out


def huds(logprobs, embeddings, beta, strata):
    ids = sorted(logprobs)
    raw = {i: -sum(logprobs[i]) / len(logprobs[i]) for i in ids}
    lo, hi = min(raw.values()), max(raw.values())
    u = {i: 0.5 if hi == lo else (raw[i] - lo) / (hi - lo) for i in ids}
    order = sorted(ids, key=lambda i: (-u[i], i))
    n = len(order)
    base, extra = divmod(n, strata)
    groups, start = [], 0
    for s in range(strata):
        size = base + (1 if s < extra else 0)
        groups.append(order[start:start + size])
        start += size
    out = {}
    for g in groups:
        if not g:
            continue
        dim = len(embeddings[g[0]])
        centroid = [sum(unit(embeddings[i])[d] for i in g) / len(g) for d in range(dim)]
        for i in g:
            d = 1.0 - cos(embeddings[i], centroid)
            out[i] = beta * u[i] + (1 - beta) * d
    return out


def main():
    idds_unlabeled = {"a": [1.0, 0.0, 0.0], "b": [0.6, 0.8, 0.0]}
    idds_labeled = {"c": [1.0, 1.0, 1.0]}
    huds_logprobs = {
        "h1": [-0.1, -0.2],
        "h2": [-1.5],
        "h3": [-0.7, -0.9, -0.3],
        "h4": [-2.0, -0.5],
        "h5": [-0.05],
        "h6": [-1.1, -1.3],
    }
    huds_embeddings = {
        "h1": [1.0, 0.2, 0.0],
        "h2": [0.3, 1.0, 0.1],
        "h3": [0.5, 0.5, 0.5],
        "h4": [0.0, 0.4, 1.0],
        "h5": [2.0, 0.1, 0.3],
        "h6": [0.2, 0.9, 0.7],
    }
    bleuvar_samples = [
        "the cat sat on the mat",
        "the cat sat on a mat",
        "a dog sat on the mat today",
    ]
    values = {
        "nsp": {"logprobs": [math.log(0.5), math.log(0.125)], "value": nsp([math.log(0.5), math.log(0.125)])},
        "mte": {
            "positions": [[math.log(0.5), math.log(0.5)], [0.0]],
            "value": mte([[math.log(0.5), math.log(0.5)], [0.0]]),
        },
        "mte_residual": {
            "positions": [[math.log(0.5), math.log(0.25)]],
            "value": mte([[math.log(0.5), math.log(0.25)]]),
        },
        "delfy_weight": {"cnt_u": 3, "cnt_l": 1, "lambda": 1.0, "value": delfy_weight(3, 1, 1.0)},
        "bleuvar_disjoint": {"samples": ["a b c", "d e f"], "value": bleuvar(["a b c", "d e f"])},
        "bleuvar_three": {"samples": bleuvar_samples, "value": bleuvar(bleuvar_samples)},
        "idds": {
            "unlabeled": idds_unlabeled,
            "labeled": idds_labeled,
            "lambda": 1.0,
            "scores": idds(idds_unlabeled, idds_labeled, 1.0),
        },
        "huds": {
            "logprobs": huds_logprobs,
            "embeddings": huds_embeddings,
            "beta": 0.5,
            "num_strata": 2,
            "scores": huds(huds_logprobs, huds_embeddings, 0.5, 2),
        },
    }
    OUT.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
