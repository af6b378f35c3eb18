from potwell.field import GridSpec, ScalarField
from potwell.flow import StepControl, run
from potwell.functionals import ModelParams
from potwell.kernel import KernelTable
from potwell.well import OptimizerConfig, WellCurve, estimate_cstar
