from .burgers import burgers_initial, solve_burgers
from .darcy import solve_darcy, threshold_grf_coefficient
from .diffusion import replicate_forcing, solve_diffusion, space_time_grid
from .grf import GRFConfig, sample_grf, sample_grf_batch
from .navier_stokes import ns_grid, ns_input_from_initial, ns_trajectory, solve_ns
from .tasks import (COST_RATIOS, TASK_NAMES, LabeledExample, MultiResDataset, TaskSpec,
                    make_pool, make_task, make_test_set, normalize_costs, query_simulator,
                    read_dataset_archive, write_dataset_archive)
