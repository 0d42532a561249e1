"""Retrieval metrics by hand: AP, P@20, nDCG@20, and TREC run files.

Two tiny worked examples show exactly what the numbers mean, then a
three-query evaluation report is formatted the way the pipeline prints
its metric tables. The run file round trip at the end is the on-disk
exchange format every ranking command writes.

Run with: python3 demos/metrics_basics.py  (instant)
"""

import math
import tempfile
from pathlib import Path

from mimicrank.evaluation import (
    average_precision,
    evaluate,
    format_metric_table,
    ndcg_at_k,
    read_run,
    write_run,
)

# ranks 1 and 3 hold the only two relevant docs:
# AP = (1/1 + 2/3) / 2 = 0.8333
ranking = ["a", "x", "b", "y"]
print("AP  :", f"{average_precision(ranking, {'a': 1, 'b': 1}):.4f}",
      "= (1/1 + 2/3)/2")

# same ranking, but a third relevant doc was never retrieved:
# DCG = 1 + 1/log2(4) = 1.5, ideal DCG = 1 + 1/log2(3) + 1/log2(4)
idcg = 1.0 + 1.0 / math.log2(3) + 0.5
print("nDCG:", f"{ndcg_at_k(ranking, {'a': 1, 'b': 1, 'c': 1}, 20):.4f}",
      f"= 1.5/{idcg:.4f}")

run = {
    "q1": [("a", 3.0), ("x", 2.0), ("b", 1.0)],
    "q2": [("m", 9.0), ("n", 8.0)],
    "q3": [("u", 2.5), ("v", 2.0), ("w", 1.5)],
}
qrels = {
    "q1": {"a": 1, "b": 1},
    "q2": {"n": 2, "z": 1},
    "q3": {"u": 1, "v": 1, "w": 1},
}
report = evaluate(run, qrels, k=20)
print()
print(format_metric_table([("demo run", report)]), end="")
print()

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.run"
    write_run(path, run, tag="demo")
    print("run file line 1:", path.read_text().splitlines()[0])
    back = read_run(path)
    print("round trip intact:", back == {q: list(docs) for q, docs in run.items()})
