"""Virtual network embedding as a mixed-integer linear program."""
from .builder import MipModel, build
from .checker import Violation, verify_embedding
from .engine import (MigrationInputs, Rejection, ReembedPlan, WhatIfResult, commit, embed,
                     reembed, whatif_subset, withdraw)
from .model import (EmbeddingProblem, MigrationContext, ModelError, NetworkElement,
                    ObjectiveConfig, ObjectiveKind, PolicyMatrices, Request, ResourceType,
                    SubstrateGraph, validate_problem)
from .solver import SolverConfig, solve_milp
from .state import Embedding, SubstrateState, empty_state

__version__ = "0.1.0"
