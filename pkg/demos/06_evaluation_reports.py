"""Evaluation harness: any-match accuracy, per-dataset records, aggregates.

Trains a quick binary model on the small benchmark, evaluates every test
partition under the protocol (candidates are always the dataset's own label
vocabulary; out-of-domain datasets were never trained on), and renders the
aggregate report with per-aspect means and the unweighted average.
"""

import glob
import os
import tempfile

from aspectzero import ReferenceEncoder, evaluate, scan_dataset
from aspectzero.corpus import IN_DOMAIN, aspect_normalize, group_by_aspect
from aspectzero.evaluation import aggregate, render_report
from aspectzero.strategies import TrainingPlan, run_plan
from aspectzero.synthetic import SyntheticSpec, write_benchmark
from aspectzero.tokenizer import HashTokenizer

spec = SyntheticSpec(
    per_aspect_train_texts={"sentiment": 20, "intent": 16, "topic": 12},
    test_texts_per_label=4, out_test_texts_per_label=8,
)
with tempfile.TemporaryDirectory() as raw_dir:
    write_benchmark(spec, seed=11, out_dir=raw_dir)
    datasets = [scan_dataset(p) for p in sorted(glob.glob(os.path.join(raw_dir, "*.jsonl")))]

in_domain = [d for d in datasets if d.spec.split == IN_DOMAIN]
out_domain = [d for d in datasets if d.spec.split != IN_DOMAIN]
corpora = aspect_normalize(group_by_aspect(in_domain), seed=0)

model = ReferenceEncoder(HashTokenizer(n_buckets=512), hidden_width=32, n_heads=4,
                         max_sequence_length=64, seed=0)
plan = TrainingPlan.default(
    "vanilla", "binary_pair", seed=0,
    finetune_overrides=dict(learning_rate=3e-3, batch_size=32, epochs=24),
)
print("training a binary cross-encoder on the in-domain corpora ...")
model, _ = run_plan(plan, model, corpora)

records = []
for d in [x for c in corpora for x in c.datasets] + out_domain:
    record = evaluate(model, "binary_pair", d, run_id="demo",
                      dump_predictions=True)
    records.append(record)

report = aggregate(records)
print()
print(render_report(report))
worst = min(records, key=lambda r: r.accuracy)
print(f"per-example dump for the weakest dataset ({worst.dataset_id}):")
for row in worst.predictions[:5]:
    print(f"  gold={row['gold']} predicted={row['prediction']!r} "
          f"correct={row['correct']}")
