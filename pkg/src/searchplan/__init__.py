"""Multi-agent minimum-time search planning on probabilistic maps.

The package turns a segmented map plus a prior probability map into
coordinated per-agent search paths that minimize the expected time to find a
static target, supports human preference injection through per-agent shares
of the prior, and ships a simulation harness plus a session service with a
browser console.
"""

from .belief import (
    BeliefState,
    PlanEvaluation,
    bayes_no_detection_update,
    belief_from_grids,
    equal_split,
    expected_time,
    expected_time_naive,
    split_sub_priors,
    step_probability,
    step_probability_by_agent,
)
from .colony import (
    AntSolution,
    HeuristicField,
    MMASParams,
    PheromoneField,
    SearchProblem,
    build_tsp_heuristic,
    construct_ant_solution,
    deposit_best,
    evaporate,
    greedy_seed_solution,
    init_pheromones,
    mts_heuristic,
    optimize,
    transition_probabilities,
)
from .errors import (
    DeadEndError,
    DegeneratePriorError,
    EmptyAgentPriorError,
    EmptySubgraphError,
    InvalidPlanError,
    InvalidPoseError,
    InvalidSpecError,
    MapFormatError,
    PlanningError,
    ProtocolError,
)
from .harness import (
    BenchRow,
    BenchSetting,
    SimResult,
    benchmark,
    experiment_summary,
    percent_considered_areas,
    run_search,
    simulate_ticks,
    write_benchmark_csv,
)
from .maps import (
    AgentProfile,
    OccupancyGrid,
    PreferredArea,
    ProbabilityGrid,
    SearchGraph,
    SegmentedMap,
    agent_subgraph,
    build_graph,
    class_weight_prior,
    derive_occupancy,
    load_agents,
    load_prior,
    load_segmented_map,
    sample_nodes,
    save_prior,
    save_segmented_map,
)
from .scenarios import (
    GaussianComponent,
    PlanningConfig,
    Scenario,
    ScenarioSpec,
    build_graphs,
    build_problem,
    gaussian_mixture_prior,
    generate_scenario,
    uniform_prior,
)
from .visibility import (
    VisibilityCache,
    VisibleRegion,
    detection_probability,
    first_detector,
    segment_clear,
    visible_region,
)

__version__ = "0.1.0"
