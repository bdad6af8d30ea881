from .models import (
    Action, AdrState, ObservationCase, QuadratureRule, SolveMethod, CostMode, PolicyId,
    AdrModel, LikelihoodPair, ObsScenario, VbPosterior, VbPosteriorBatch,
    BeliefGrid, ContinuationTable, ValueTable, ThresholdResult, WhittleTable,
    FleetAdr, FleetScenario, PolicyStats, SimReport,
)
