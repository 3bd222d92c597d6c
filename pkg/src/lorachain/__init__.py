"""Forward/backward graph variants, FLOP cost model and variant selection for
LoRA-adapted linear layers."""

from .costmodel import (BACKWARD_VARIANTS, EXECUTABLE_BACKWARD, FORWARD_VARIANTS, CostReport,
                        FlopOverflowError, ShapeConfig, UnsupportedVariantError, VariantId,
                        activation_memory_saved, baseline_costs, cost_report, flops_backward,
                        flops_forward, param_reduction_holds, workspace_elements)
from .dense import FlopCounter, ShapeError, add, fill_random, matmul, max_rel_diff
from .selector import PairPlan, plan_model, plan_totals, select_by_flops, select_by_time
from .variants import (Gradients, LoraLayer, NumericError, backward, finite_difference_check,
                       forward, reference_backward)

__version__ = "0.1.0"
