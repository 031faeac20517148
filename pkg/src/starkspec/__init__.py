"""Complex eigenvalues of the constant-field Schrodinger operator with a
complex potential, via regularized perturbation determinants."""

__version__ = "0.1.0"
