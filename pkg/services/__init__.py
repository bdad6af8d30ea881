# Services package for the ADR solvers and simulator
