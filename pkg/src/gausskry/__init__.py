"""Energy-preserving iterative solvers for Gauss collocation of Poisson systems."""
