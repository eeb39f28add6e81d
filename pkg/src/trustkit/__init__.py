"""trustkit: sparse-recovery toolkit with classical solvers, a hybrid
attention/decoder reconstructor, and a numerical verification lab for the
isometry-based attention-error bound."""

__version__ = "0.1.0"
