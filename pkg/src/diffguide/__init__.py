"""diffguide: inference-time guidance for toy diffusion processes with exact oracles."""

from .schedules import NoiseSchedule, make_schedule
from .processes import (DistributionTable, GaussianMixtureData, GaussianProcess,
                        MaskedProcess, change_count, empirical_table,
                        exact_denoiser_continuous, gaussian_backward_step,
                        gaussian_forward_sample, masked_backward_dist,
                        masked_forward_sample, onehot_view, param_convert,
                        serialize_states, string_from_tokens, tokens_from_string)
from .rewards import (CompositeReward, FrobeniusReward, LinearReward,
                      QuadraticReward, RewardModel, TableReward,
                      constant_table_reward, reward_eval, reward_grad)
from .values import (ConstantValue, ExactDiscreteValues, FittedDiscreteValues,
                     GaussianLinearValue, PosteriorMeanValue,
                     closed_form_gaussian_value, exact_value_discrete,
                     mc_regression_fit, posterior_mean_value,
                     soft_bellman_residuals, soft_q_fit)
from .oracles import (MetricsSummary, OracleTarget, brute_force_target, ess,
                      gaussian_grid_table, kl_divergence, report_metrics,
                      tv_distance)
from .so3 import (So3Process, check_rotation, hat, random_rotations, so3_exp,
                  so3_log, so3_riemannian_grad, so3_tangent_noise, vee)
from .samplers import (GuidanceConfig, ParticleSystem, SamplerReport,
                       TransitionKernel, beam_search, best_of_n,
                       classifier_guidance_continuous, classifier_guidance_so3,
                       discrete_guidance_exact, discrete_guidance_taylor,
                       nested_smc, pretrained_kernel, pretrained_sampling,
                       smc_guidance, svdd, walk_jump)
from .search import SearchConfig, leaf_rollout_value, mcts_denoise
from .refine import RefineConfig, RefineResult, hamming_constraint, iterative_refine
from .distill import (GuidedTeacher, RollinSpec, TabularPolicy, distill_kl,
                      distill_inverse_kl_step, inverse_kl_grad_norm, make_rollin,
                      oracle_policy, pcl_fit, pcl_loss, pretrained_teacher,
                      svdd_teacher)

__version__ = "0.1.0"
