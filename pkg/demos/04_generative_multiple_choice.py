"""Generative classification as multiple-choice question answering.

Renders a natural-language prompt listing the candidate labels, trains the
autoregressive reference model to generate the correct answer, and shows
greedy decoding plus the embedding fallback that maps a free-form
generation onto the nearest candidate.
"""

from aspectzero import ReferenceEncoder, generative_loss, generative_predict
from aspectzero.evaluation import map_generated_to_label
from aspectzero.encoder import gradient
from aspectzero.formalizations import build_generative_prompt, lm_batch_loss
from aspectzero.optim import AdamW
from aspectzero.tokenizer import END, HashTokenizer

import numpy as np

tokenizer = HashTokenizer(n_buckets=512, aspects=("sentiment", "intent", "topic"))
model = ReferenceEncoder(tokenizer, mode="autoregressive", hidden_width=32,
                         n_heads=4, max_sequence_length=96, seed=1,
                         position_init_std=0.2)

prompt = build_generative_prompt(
    tokenizer,
    text="goal scored in the last minute",
    options=("sports", "finance", "weather"),
    aspect="topic",
    max_sequence_length=96,
)
print("rendered prompt tokens, decoded back:")
print(" ", tokenizer.decode(prompt.ids))
print(f"answer span starts at token {prompt.answer_start} of {len(prompt.ids)}")

print(f"\nloss before training: {generative_loss(model, prompt, 'sports'):.2f}")

sequence = list(prompt.ids) + tokenizer.encode("sports") + [END]
ids, mask = model.encode_batch([sequence])
loss_mask = np.zeros_like(mask)
loss_mask[0, 1:len(sequence)] = 1.0
optimizer = AdamW(model.parameters(), 3e-3)
for _ in range(200):
    optimizer.step(gradient(model, lm_batch_loss, (ids, mask, loss_mask)))
print(f"loss after 200 overfitting steps: {generative_loss(model, prompt, 'sports'):.4f}")

generated = generative_predict(model, prompt, max_new_tokens=4)
print(f"greedy generation: {generated!r}")

# when the generation is not one of the options, the fallback embeds it and
# picks the most similar candidate
print("\nfallback mapping for free-form generations:")
for generation in ("sports", "team scores goal", ""):
    mapped = map_generated_to_label(generation, ["team sports", "finance news"])
    print(f"  {generation!r:20s} -> {mapped!r}")
