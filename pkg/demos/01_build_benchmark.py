"""Build the synthetic benchmark and normalize it by aspect.

Generates three-aspect JSONL datasets (two in-domain datasets per aspect
plus one out-of-domain dataset with unseen labels), then subsamples the
in-domain corpora so every aspect contributes the same number of unique
train texts while each dataset keeps its label distribution.
"""

import glob
import os
import tempfile

from aspectzero import aspect_normalize, group_by_aspect, scan_dataset
from aspectzero.corpus import IN_DOMAIN
from aspectzero.synthetic import SyntheticSpec, write_benchmark

spec = SyntheticSpec(
    per_aspect_train_texts={"sentiment": 20, "intent": 16, "topic": 12},
    test_texts_per_label=4,
)

with tempfile.TemporaryDirectory() as raw_dir:
    paths = write_benchmark(spec, seed=11, out_dir=raw_dir)
    print(f"wrote {len(paths)} datasets to {raw_dir}")

    datasets = [scan_dataset(p) for p in sorted(glob.glob(os.path.join(raw_dir, "*.jsonl")))]
    for d in datasets:
        train, test = len(d.partition("train")), len(d.partition("test"))
        print(f"  {d.spec.dataset_id:18s} {d.spec.aspect:9s} {train}/{test} "
              f"{len(d.spec.label_vocabulary)} labels")

    sample = datasets[0].examples[0]
    print(f"\nsample text: {sample.text!r}")
    print(f"gold labels: {sample.gold_labels}")

    in_domain = [d for d in datasets if d.spec.split == IN_DOMAIN]
    corpora = group_by_aspect(in_domain)
    print("\nunique train texts per aspect before normalization:",
          {c.aspect: c.unique_text_count for c in corpora})

    normalized = aspect_normalize(corpora, seed=0)
    print("after normalization:                               ",
          {c.aspect: c.unique_text_count for c in normalized})
