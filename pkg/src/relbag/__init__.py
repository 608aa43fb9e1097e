"""relbag: bag-level relation extraction with passage attention, desk scale.

A bag (all sentences mentioning an ordered entity pair) is concatenated into
one fixed-length passage, encoded by a transformer that masks padding on
both sides of self-attention, and summarized once per relation by
query-vector attention over every position, padding included; a single
shared binary classifier scores each summary. Intra-bag baselines,
ranked-triple metrics, diagnostics and a synthetic corpus generator round
out the toolkit.
"""

from . import analysis, autodiff, config, data, encoder, heads, metrics, model
from . import passage, synth, train
from .autodiff import Tensor, backward, finite_difference_check, no_grad, zero_grads
from .checkpoint import Checkpoint, load_tensors, save_tensors
from .data import (Bag, Instance, KnowledgeBase, Mention, RelationInventory,
                   build_kb, group_bags, load_dataset, load_inventory, save_dataset)
from .encoder import EncoderConfig, EncoderOutput, desk_scale_config, encode
from .heads import (IntraBagHead, PassageAttHead, TripleConfidence,
                    intra_bag_forward, multilabel_loss, score_triples,
                    summarize_passage)
from .metrics import MetricsReport, RankedTriples, evaluate_model, rank_triples
from .model import IntraBagModel, PassageAttModel
from .passage import Passage, Vocabulary, build_passage, build_vocab, encode_instance
from .synth import SynthSpec, generate, write_corpus
from .train import TrainConfig, evaluate_checkpoint, train as train_model

__version__ = "0.1.0"
