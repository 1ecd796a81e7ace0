"""causaltransfer - task-aware transfer of individual treatment effect models.

    import causaltransfer as ct

    source = ct.generate(ct.GeneratorConfig("heat", {"k": 1.0}))
    target = ct.generate(ct.GeneratorConfig("heat", {"k": 0.5}))
    model, _ = ct.train(source, config=ct.TrainConfig(epochs=50))
    report = ct.cita(model, source, target)
    tuned, _ = ct.fine_tune(model, target, ct.TrainConfig(epochs=10))
"""

__version__ = "0.1.0"

from .affinity import (
    FisherSignature,
    TaskDistanceReport,
    check_approximation,
    cita,
    empirical_fisher_diag,
    frechet_distance,
    load_report,
    save_report,
    select_closest,
)
from .balance import EXACT_SIZE_CAP, PointCloud, TransportResult, cost_matrix, exact_w1, sinkhorn_w1
from .datagen import (
    FLIP_GRID,
    HEAT_K_GRID,
    IHDP_SETTINGS,
    JOBS_FLIP_GRID,
    MOVEMENT_MK_GRID,
    CausalDataset,
    DatasetMeta,
    Family,
    GeneratorConfig,
    concat_datasets,
    counterfactual_view,
    family_tasks,
    flip_family,
    flip_potential_columns,
    flip_treatments,
    gen_heat,
    gen_ihdp,
    gen_movement,
    gen_rkhs,
    gen_surrogate,
    generate,
    load_dataset,
    load_factual_csv,
    mean_outcomes,
    nested_subsets,
    reassign_bernoulli,
    save_dataset,
)
from .errors import (
    AcceptanceError,
    AffinityError,
    ApproximationError,
    CausalTransferError,
    ConfigError,
    DatasetError,
    DegenerateGroupError,
    DimensionError,
    NonFiniteError,
    PotentialsUnavailableError,
    StageError,
    TransportError,
)
from .log import configure_logging
from .metrics import (
    BoundName,
    BoundReport,
    LossReport,
    OraclePredictor,
    ate_error,
    check_shalit_sandwich,
    check_thm1,
    check_thm2_l1_heat,
    check_transfer_bounds,
    losses,
    pearson,
    pehe,
    spearman,
)
from .nnkernel import Activation, MlpSpec, OptimizerConfig, OptimizerRule, backward_batch, forward_batch, init_params
from .tarnet import (
    IpmConfig,
    LossKind,
    TarNetModel,
    TrainConfig,
    build_model,
    fine_tune,
    load_model,
    objective,
    objective_and_grad,
    permute_heads,
    predict_ite,
    predict_ite_batch,
    save_model,
    swap_heads,
    train,
)
