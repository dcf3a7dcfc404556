"""Bundled tableaux and test problems."""

from regflow.resources.providers import (
    PROBLEMS,
    TABLEAUX,
    BundledProblem,
    get_problem,
    get_tableau,
    list_problems,
    list_tableaux,
    load_tableau,
    make_solution,
)

__all__ = [
    "PROBLEMS",
    "TABLEAUX",
    "BundledProblem",
    "get_problem",
    "get_tableau",
    "list_problems",
    "list_tableaux",
    "load_tableau",
    "make_solution",
]
