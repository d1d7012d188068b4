"""Shared test helpers: the finite-difference gradient oracle and tiny
dataset builders.

The oracle is deliberately independent of the autodiff engine: it perturbs
raw parameter arrays and re-evaluates the loss.
"""

from __future__ import annotations

import numpy as np

from aspectzero.corpus import Dataset, DatasetSpec, Example, IN_DOMAIN


def finite_difference_check(model, loss_fn, batch, grads, rng,
                            coords_per_tensor=3, h=1e-5, rtol=1e-3):
    """Compare `grads` against central finite differences at sampled
    coordinates of every parameter tensor.  Returns the worst relative
    error seen."""

    def loss_value():
        return float(loss_fn(model, batch).data)

    worst = 0.0
    for name, tensor in model.parameters().items():
        flat = tensor.data.reshape(-1)
        k = min(coords_per_tensor, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            original = flat[i]
            flat[i] = original + h
            up = loss_value()
            flat[i] = original - h
            down = loss_value()
            flat[i] = original
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[i]
            denom = max(abs(fd), abs(an), 1e-8)
            rel = abs(fd - an) / denom
            worst = max(worst, rel)
            assert rel <= rtol, (
                f"{name}[{i}]: analytic {an:.3e} vs finite-difference {fd:.3e} "
                f"(relative error {rel:.2e})"
            )
    return worst


def tiny_dataset(dataset_id="toy", aspect="sentiment", split=IN_DOMAIN,
                 labels=("joy", "anger"), texts_per_label=4, seed=0,
                 partition_mix=("train", "train", "train", "test")):
    """A small single-aspect dataset; texts contain their label word."""
    rng = np.random.default_rng(seed)
    filler = ["about", "with", "from", "over", "very", "just", "still", "then"]
    examples = []
    for label in labels:
        for i in range(texts_per_label):
            extra = [filler[j] for j in rng.choice(len(filler), 3, replace=False)]
            words = [label.split()[0]] + list(label.split()[1:]) + extra
            order = rng.permutation(len(words))
            text = " ".join(words[k] for k in order) + f" {dataset_id}{label.split()[0]}{i}"
            examples.append(
                Example(text, (label,), dataset_id, aspect, split,
                        partition_mix[i % len(partition_mix)])
            )
    spec = DatasetSpec(dataset_id, aspect, split, tuple(labels))
    return Dataset(spec, examples)
