"""Zero-shot text classification with aspect-conditioned training.

Three formalizations let a single encoder or language model score unseen
labels: binary cross-encoding over (label, text) pairs, dual encoding with
cosine similarity, and generative multiple choice.  Two training strategies
inject aspect knowledge: implicit (a conditional aspect token in every
input) and explicit (an aspect-detection pre-training stage).  The corpus
tools build aspect-normalized in-domain corpora with out-of-domain splits
and label-token overlap diagnostics; the evaluation harness scores any-match
accuracy and aggregates per-aspect reports.
"""

from .corpus import (
    AspectCorpus,
    CorpusError,
    Dataset,
    DatasetSpec,
    Example,
    aspect_normalize,
    canonical_jsonl,
    group_by_aspect,
    label_overlap,
    load_dataset,
    overlap_matrix,
    scan_dataset,
    standardize_labels,
    write_jsonl,
)
from .encoder import (
    BagOfTokenEmbedder,
    NonFiniteLossError,
    PooledVector,
    ReferenceEncoder,
    encode,
    gradient,
    lm_step,
    load_checkpoint,
    pool,
    save_checkpoint,
)
from .evaluation import (
    MetricsRecord,
    aggregate,
    evaluate,
    is_correct,
    map_generated_to_label,
    render_report,
)
from .formalizations import (
    ClassificationInstance,
    GenerativePrompt,
    build_generative_prompt,
    binary_predict,
    binary_score,
    canonical_label,
    dual_encode_score,
    dual_loss,
    dual_predict,
    generative_loss,
    generative_predict,
    load_template_pack,
    make_binary_pairs,
    seq_cls_predict,
)
from .strategies import (
    StageConfig,
    TrainingPlan,
    aspect_pretrain,
    build_training_instances,
    finetune,
    inject_aspect,
    run_plan,
)
from .synthetic import SyntheticSpec, generate, write_benchmark
from .tokenizer import DEFAULT_ASPECTS, HashTokenizer

__version__ = "0.1.0"
