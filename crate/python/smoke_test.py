"""Smoke test for the tgnn_py extension module.

Build it first (see README), then run: python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import tgnn_py  # noqa: E402


def main():
    with tempfile.TemporaryDirectory() as tmp:
        graph, labels = tgnn_py.synthetic("planted", seed=7, out_dir=tmp)
        loaded = tgnn_py.Graph.load(
            os.path.join(tmp, "nodes.tsv"),
            os.path.join(tmp, "edges.tsv"),
            os.path.join(tmp, "schemas.json"),
        )
    assert loaded.node_count == graph.node_count == 600
    assert loaded.types == ["P", "A", "V"], loaded.types
    print(graph)

    config = json.dumps({
        "hidden_dim": 16, "metric_dim": 8, "walks_per_node": 2, "walk_length": 10,
        "batch_size": 512, "epochs": 5, "learning_rate": 0.01, "seed": 7,
    })
    model = tgnn_py.train(graph, config)
    assert model.losses and all(math.isfinite(x) for x in model.losses)
    print(f"trained {len(model.losses)} batches, last loss {model.losses[-1]:.4f}")

    emb = model.encode(graph)
    again = tgnn_py.Model.from_checkpoint(graph, model.checkpoint_json()).encode(graph)
    assert emb == again

    papers = graph.nodes_of_type("P")
    names = sorted(set(labels[p] for p in papers))
    truth = [names.index(labels[p]) for p in papers]
    pred = tgnn_py.kmeans([emb[p] for p in papers], len(names), seed=7)
    score = tgnn_py.nmi(pred, truth)
    print(f"paper NMI after 5 epochs: {score:.3f}, ARI {tgnn_py.ari(pred, truth):.3f}")
    assert 0.0 <= score <= 1.0

    assert tgnn_py.auc([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 1.0
    err = tgnn_py.gradcheck(0)
    assert err < 1e-4, err
    print(f"gradcheck max relative error {err:.2e}")

    try:
        tgnn_py.train(graph, '{"hidden_dim": 0}')
    except ValueError as e:
        print(f"bad config rejected: {e}")
    else:
        raise AssertionError("invalid config accepted")
    print("ok")


if __name__ == "__main__":
    main()
