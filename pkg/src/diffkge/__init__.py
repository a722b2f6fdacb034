"""Multimodal knowledge-graph completion with diffusion-generated negatives."""

from .data import (BernoulliStats, DatasetError, FilterIndex, Mmkg,
                   bernoulli_stats, build_filter_index, load_mmkg, write_mmkg)
from .diffusion import (DenoiserParams, DiffusionBatch, NoiseSchedule,
                        diffusion_loss, forward_noise, init_denoiser,
                        make_schedule, positional_embedding, predict_noise,
                        reverse_chain, reverse_final, reverse_step)
from .evaluation import EvalResult, evaluate, format_table, rank_query
from .models import (EmbeddingSpace, condition, energy, init_space,
                     modality_embed, rel_vec)
from .negatives import (NegativeBundle, SampledNegatives, default_steps,
                        generate_bundle, hardness_level, level_margin,
                        level_weight, sample_bernoulli, sample_uniform)
from .nn import (AdamState, MlpParams, adam_init, adam_step, finite_diff_grad,
                 make_rng, mlp_backward, mlp_forward, mlp_init, rel_error)
from .synthetic import make_synthetic
from .training import (ConfigError, TrainConfig, TrainReport,
                       TrainingDiverged, hardness_adaptive_loss, joint_score,
                       kgc_loss, total_loss, train)

__version__ = "0.1.0"
