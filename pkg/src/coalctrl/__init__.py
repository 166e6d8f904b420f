"""coalctrl: topology-switching coalitional control for networked LTI systems.

Structured controller/observer synthesis via semidefinite programming, per
communication topology; set-membership (ellipsoidal) state estimation; an
online supervisor trading control performance against communication cost;
and a simulation harness with a vehicle-platoon benchmark.
"""

from .model import (PlantModel, Topology, Partition, StructMask, PlatoonParams,
                    ModelError, enumerate_topologies, coalitions_of,
                    split_dynamics, mask_for, mask_from_owners, zoh_discretize,
                    build_platoon, platoon_continuous,
                    check_stabilizable_detectable, input_state_mask, gain_mask,
                    observer_mask, extended_state_mask)
from .synthesis import (SdpSpec, SynthOptions, ControllerGains, ObserverGains,
                        TopologyCertificate, SynthesisError,
                        InfeasibleTopologyError, SolverFailureError,
                        VertexBudgetError, synth_controller, synth_observer,
                        coupling_vertices, closed_loop_matrix, certify_topology,
                        lifted_dynamics, spectral_radius)
from .runtime import SimState, plant_step, measure, control_update, \
    observer_step, rho_step
from .supervisor import (SwitchDecision, WorstCaseBudgetError, ellipsoid_box,
                         worst_case, topology_cost, select_topology)

__version__ = "0.1.0"
