"""Binary cross-encoding vs dual encoding on labels never seen in training.

Trains the reference encoder briefly on two in-domain sentiment datasets
whose label phrases recombine a shared token pool, then scores a text
against brand-new label phrases.  Both formalizations rank the matching
label first; the supervised softmax baseline cannot even express it.
"""

import numpy as np

from aspectzero import ReferenceEncoder, binary_predict, dual_predict
from aspectzero.corpus import Dataset, DatasetSpec, Example, IN_DOMAIN
from aspectzero.formalizations import binary_score, dual_encode_score
from aspectzero.strategies import TrainingPlan, run_plan
from aspectzero.tokenizer import HashTokenizer

rng = np.random.default_rng(0)
FILLER = ["about", "with", "from", "over", "very", "just", "still", "then"]


def make_dataset(ds_id, labels, n=14):
    examples = []
    for phrase in labels:
        for i in range(n):
            words = phrase.split() * 2 + ["mood"] + [
                FILLER[j] for j in rng.choice(len(FILLER), 2, replace=False)
            ]
            order = rng.permutation(len(words))
            examples.append(Example(" ".join(words[k] for k in order) + f" v{i}",
                                    (phrase,), ds_id, "sentiment", IN_DOMAIN, "train"))
    return Dataset(DatasetSpec(ds_id, "sentiment", IN_DOMAIN, tuple(labels)), examples)


train_a = make_dataset("reviews", ("happy sad", "angry", "joyful fear", "love hate"))
train_b = make_dataset("posts", ("happy fear", "love", "sad angry", "joyful hate"))

tokenizer = HashTokenizer(n_buckets=512, aspects=("sentiment", "intent", "topic"))
model = ReferenceEncoder(tokenizer, hidden_width=32, n_heads=4,
                         max_sequence_length=64, seed=0)
plan = TrainingPlan.default(
    "vanilla", "binary_pair", seed=0,
    finetune_overrides=dict(learning_rate=3e-3, batch_size=32, epochs=18),
)
print("training the binary cross-encoder ...")
model, artifacts = run_plan(plan, model, [train_a, train_b])
print(f"  {len(artifacts['log'])} steps, "
      f"final loss {artifacts['log'][-1]['loss']:.4f}")

dual_model = ReferenceEncoder(HashTokenizer(n_buckets=512), hidden_width=32,
                              n_heads=4, max_sequence_length=64, seed=0)
dual_plan = TrainingPlan.default(
    "vanilla", "dual_pair", seed=0,
    finetune_overrides=dict(learning_rate=3e-3, batch_size=32, epochs=8),
)
print("training the dual encoder ...")
dual_model, _ = run_plan(dual_plan, dual_model, [train_a, train_b])

text = "sad very hate mood sad hate about then"
unseen = ["happy love", "hate sad", "joyful angry"]  # none trained as phrases
print(f"\ntext: {text!r}")
print(f"unseen candidate labels: {unseen}")
print("\nbinary cross-encoder scores:")
for label in unseen:
    print(f"  P(True | {label!r:16s}) = {binary_score(model, text, label):.3f}")
print(f"  -> prediction: {binary_predict(model, text, unseen)!r}")
print("\ndual encoder cosine scores:")
for label in unseen:
    print(f"  cos({label!r:16s}) = {dual_encode_score(dual_model, text, label):+.3f}")
print(f"  -> prediction: {dual_predict(dual_model, text, unseen)!r}")
