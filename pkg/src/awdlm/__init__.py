"""Desk-scale word-level language modeling toolkit.

A stacked LSTM with DropConnect on the recurrent weights, per-pass
variational dropout, row-level embedding dropout, tied input/output
embeddings, activation and temporal-smoothness penalties, variable-length
training windows, averaged SGD with a non-monotonic trigger, and a
continuous-cache decoder. Built on a small reverse-mode tape over numpy.
"""

from .rng import Rng
from .tensor import (Tensor, backward, constant, parameter, sample_bernoulli_mask)
from .gradcheck import GradCheckReport, check_gradient
from .corpus import (BatchedCorpus, BpttSchedule, Vocabulary, batchify, build_vocab,
                     next_window, read_tokens, rescale_lr, sample_bptt_length, tokenize)
from .model import (DropoutRates, ForwardResult, HiddenState, LMParameters, MaskSet,
                    apply_weight_drop, embed, forward, init_parameters, lstm_cell,
                    sample_masks, training_loss)
from .optim import (FinalWeights, TrainerState, accumulate_average, clip_global_norm,
                    finalize, global_grad_norm, nonmono_worse, nt_asgd_check, sgd_step)
from .cache import (CacheConfig, CacheGrid, CacheWindow, cache_distribution,
                    evaluate_with_cache, mix, tune_cache, word_loss_diff)
from .config import RunConfig, dump_config, make_config, PROFILES
from .checkpoint import (Checkpoint, CheckpointError, load_checkpoint, save_checkpoint)
from .training import (ablate, apply_ablation, evaluate, fine_tune, params_from_weights,
                       train)

__version__ = "0.1.0"
