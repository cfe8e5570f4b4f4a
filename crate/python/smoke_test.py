"""Smoke test for the `sqd` extension module.

Build and run from the repository root:

    cargo build -p sqd-py --release
    cp target/release/libsqd.so python/sqd.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import sqd  # noqa: E402


def main():
    model = sqd.Model.random_tabular(vocab_size=7, num_states=7, seed=3)
    assert model.tokens[:2] == ["<s>", "</s>"]
    src = model.parse("w2 w3 w4")
    assert src == [2, 3, 4]

    beam = model.decode(src, strategy="beam-lnorm", beam_size=3, retain_size=3)
    same = model.decode(src, strategy="sqd", beam_size=3, retain_size=3)
    assert beam.tokens == same.tokens, (beam, same)

    res = model.decode(src, beam_size=3, alpha=0.2)
    assert res.steps <= 150
    assert all(a >= b for row in res.trace for a, b in zip(row, row[1:]))
    if not res.fallback:
        assert res.tokens[-1] == model.eos
        assert math.isclose(res.cum_logprob, model.logprob(src, res.tokens), rel_tol=1e-12)

    best = model.exhaustive_best(src, 4, lambda_=1.0)
    wide = model.decode(src, strategy="beam-lnorm", beam_size=7**4, max_steps=4)
    assert best is not None and wide.tokens == best[0]

    pairs = [([2] * n, [3] * n) for n in range(1, 9)] * 10
    losses = model.train_length_predictor(pairs, epochs=5, learning_rate=0.01, seed=1)
    assert len(losses) == 5 and losses[-1] < losses[0], losses
    mu, sigma = model.predicted_length([2, 2, 2, 2])
    assert sigma > 0
    penalized = model.decode(src, gamma=-1.0, tau=3.0)
    assert penalized.steps >= 1

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.json")
        model.save(path)
        again = sqd.Model.load(path)
        assert again.has_length_predictor
        assert again.decode(src).tokens == model.decode(src).tokens

    assert sqd.lms(1.0, 2.0, 1.0, 2.0) == sqd.lms(1.0, 2.0, 1.0, 2.0, mode="swapped")
    assert sqd.rank_stats([[[-1.0]], [[-3.0]]], 1) == [(1, 0, -2.0, 2)]

    neural = sqd.Model.random_neural(vocab_size=6, seed=2)
    out = neural.decode([2, 3], max_steps=10)
    assert out.steps <= 10

    try:
        model.decode([99])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-vocabulary id accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
