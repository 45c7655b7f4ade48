"""Exact tensor-network simulation of the 2D transverse-field Ising model."""

from .tensor import MemoryCeilingError, SvdResult, Tensor, contract_pair, matricize, permute, svd_truncate
from .lattice import PepsLattice, amplitude, build_double_layer, init_uniform, load_checkpoint, save_checkpoint
from .plan import ClosedNetwork, Plan, estimate_cost, execute_plan_sequential, plan_quadrant, plan_row
from .parallel import execute_plan_parallel
from .ite import IteConfig, ite_run
from .observables import full_report

__version__ = "0.1.0"
