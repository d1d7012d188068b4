"""The three training strategies: vanilla, implicit, explicit.

Implicit training injects a reserved aspect token into every input so the
model conditions on the task family; explicit training first runs an
aspect-detection stage whose classification head is discarded, leaving an
aspect-aware backbone to initialize fine-tuning.
"""

import glob
import os
import tempfile

import numpy as np

from aspectzero import ReferenceEncoder, evaluate, scan_dataset
from aspectzero.corpus import IN_DOMAIN, aspect_normalize, group_by_aspect
from aspectzero.formalizations import ClassificationInstance, binary_input_ids
from aspectzero.strategies import TrainingPlan, inject_aspect, run_plan
from aspectzero.synthetic import SyntheticSpec, write_benchmark
from aspectzero.tokenizer import HashTokenizer

tokenizer = HashTokenizer(n_buckets=512, aspects=("sentiment", "intent", "topic"))

# aspect injection is a pure instance transform; on encoder inputs it adds
# exactly one [sep] + aspect-token block
instance = ClassificationInstance("binary_pair", "calm quiet evening", "calm", True)
injected = inject_aspect(instance, "sentiment")
plain_ids = binary_input_ids(tokenizer, instance.text, instance.label, None, 64)
aspect_ids = binary_input_ids(tokenizer, injected.text, injected.label,
                              injected.aspect, 64)
print(f"vanilla input ids:  {plain_ids}")
print(f"implicit input ids: {aspect_ids}")

spec = SyntheticSpec(
    labels_per_dataset=4,
    per_aspect_train_texts={"sentiment": 10, "intent": 8, "topic": 6},
    test_texts_per_label=3, out_test_texts_per_label=6,
)
with tempfile.TemporaryDirectory() as raw_dir:
    write_benchmark(spec, seed=11, out_dir=raw_dir)
    datasets = [scan_dataset(p) for p in sorted(glob.glob(os.path.join(raw_dir, "*.jsonl")))]
in_domain = [d for d in datasets if d.spec.split == IN_DOMAIN]
out_domain = [d for d in datasets if d.spec.split != IN_DOMAIN]
corpora = aspect_normalize(group_by_aspect(in_domain), seed=0)

for strategy in ("vanilla", "implicit", "explicit"):
    model = ReferenceEncoder(HashTokenizer(n_buckets=512), hidden_width=32,
                             n_heads=4, max_sequence_length=64, seed=0)
    plan = TrainingPlan.default(
        strategy, "binary_pair", seed=0,
        pretrain_overrides=dict(learning_rate=1e-3, batch_size=32, epochs=3),
        finetune_overrides=dict(learning_rate=3e-3, batch_size=32, epochs=12),
    )
    model, artifacts = run_plan(plan, model, corpora)
    policy = "dataset" if strategy == "implicit" else "none"
    out_acc = np.mean([
        evaluate(model, "binary_pair", d, aspect_policy=policy).accuracy
        for d in out_domain
    ])
    stages = [s.name for s in plan.stages]
    print(f"{strategy:9s} stages={stages} steps={len(artifacts['log'])} "
          f"out-of-domain accuracy={out_acc:.3f}")
