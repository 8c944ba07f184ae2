"""Value-function uncertainty from TD-trained random-target prediction errors.

The package provides chain/gridworld environments and offline datasets, an
exact tabular variant, finite-width networks with hand-written backprop, the
training procedures (semi-gradient TD, synthetic-reward uncertainty training,
ensembles, distillation baselines, offline DQN), an analytical infinite-width
kernel oracle for the closed-form convergence theory, experiment drivers, and
a CLI.
"""

from .envs import (
    ChainMdp,
    ChainPolicy,
    Dataset,
    GridWorld,
    Transition,
    collect_gridworld_dataset,
    load_dataset,
    make_chain,
    make_gridworld,
    rollout_chain,
    save_dataset,
)
from .kernels import KernelPair, kernel_blocks, nngp_kernel, ntk_kernel
from .linear_oracle import LinearFeatureModel, linear_oracle_solve
from .net import MlpSpec, ParamVector, PracticalArchSpec, empirical_ntk, forward, grad, init_params
from .posterior import (
    NonPositiveDefiniteDelta,
    TdGaussian,
    block_affine_posterior,
    post_convergence_function,
    stability_check,
    supervised_posterior,
    td_posterior,
    uvu_error_law,
)
from .tabular import (
    TabularUvuState,
    init_tabular,
    tabular_ensemble_variance,
    tabular_error,
    tabular_sweep,
    tabular_synthetic_reward,
)
from .train import (
    DivergenceError,
    EnsembleModel,
    RndModel,
    TrainConfig,
    UvuModel,
    dqn_offline_train,
    ensemble_train,
    init_uvu_model,
    rnd_error,
    rnd_train,
    td_step,
    uvu_error,
    uvu_synthetic_rewards,
    uvu_train,
)
from .evaluation import HeatmapGrid, chain_heatmap, ks_test, run_task_rejection, uncertainty_correlation

__version__ = "0.1.0"
