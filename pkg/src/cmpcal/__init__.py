"""Confidence misalignment penalty: losses, gradients, calibration metrics, training."""

from ._config import (CmpError, InvalidArgumentError, NumericFailureError, ParseError,
                      TrainingFailureError)
from .calibration import (BinStat, CalibrationReport, Prediction, ace, confidence_histograms,
                          ece, mce, predictions_from_logits, predictions_from_probs, report)
from .datasets import (EmbeddingDataset, LogitDataset, SynthSpec, load_embeddings, load_logits,
                       save_embeddings, save_report, synth_generate)
from .losses import (CmpConfig, CompetitorSet, LossBreakdown, clip_contrastive_loss, cmp_batch,
                     cmp_sample, competitor_set, cross_entropy, final_loss, grad_logits,
                     loss_from_logits)
from .prob_core import (SimilarityMatrix, competitor_prob_bound, entropy, entropy_upper_bound,
                        perplexity, sharpness, similarity_gap, softmax)
from .trainer import (HeadParams, TrainConfig, TrainHistory, evaluate, forward, init_head,
                      lambda_line_search, train)

__version__ = "0.1.0"
