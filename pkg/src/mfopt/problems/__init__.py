from .base import OptProblem
from .diffusion_reaction import DiffusionReactionProblem, dr_solve
from .flow_transport import FlowTransportProblem, flow_nominal_velocity, flow_solve

__all__ = ["OptProblem", "DiffusionReactionProblem", "FlowTransportProblem", "dr_solve",
           "flow_solve", "flow_nominal_velocity"]
