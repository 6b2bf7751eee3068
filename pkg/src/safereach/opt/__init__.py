from .simplex import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    LpProblem,
    LpResult,
    SimplexSolver,
    simplex_solve,
)
from .programs import (
    OccupationSolution,
    build_extended_lp,
    build_known_lp,
    decode,
    expected_row_counts,
    extract_policy,
    solve_lp,
    xi_operator,
)
from .entropy import EntropyObjective, build_entropy_objective, solve_entropy_program
